#include <iostream>

#include "cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ncm::cli::run(args, std::cin, std::cout, std::cerr);
}
