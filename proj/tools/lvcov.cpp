#include <iostream>

#include "lvcov/cli.hpp"

int main(int argc, char** argv) { return lvcov::run_cli(argc, argv, std::cout, std::cerr); }
