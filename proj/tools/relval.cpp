#include <iostream>
#include <string>
#include <vector>

#include "relval/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return relval::run_cli(args, std::cout, std::cerr);
}
