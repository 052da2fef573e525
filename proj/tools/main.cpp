#include <iostream>

#include "rc3d/cli.hpp"

int main(int argc, char** argv) { return rc3d::cli::run_cli(argc, argv, std::cout, std::cerr); }
