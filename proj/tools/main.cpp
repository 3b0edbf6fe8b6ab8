#include <iostream>

#include "concernsim/cli.hpp"

int main(int argc, char** argv) { return concernsim::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
