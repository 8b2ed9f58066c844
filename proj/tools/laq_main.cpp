#include <iostream>

#include "laq/cli.hpp"

int main(int argc, char** argv) {
  return laq::cli::run_cli(argc, argv, std::cout, std::cerr);
}
