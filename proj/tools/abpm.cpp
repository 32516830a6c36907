#include "abpm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return abpm::run_cli(argc, argv, std::cout, std::cerr); }
