#include <iostream>
#include <string>
#include <vector>

#include "senti/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return senti::cli_dispatch(args, std::cout, std::cerr);
}
