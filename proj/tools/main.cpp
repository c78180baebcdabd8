#include <string>
#include <vector>

#include "pdsim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pdsim::cli::run_cli(args);
}
