#include <iostream>

#include "ciim/cli.hpp"

int main(int argc, char** argv) { return ciim::cli::run(argc, argv, std::cout, std::cerr); }
