#include <iostream>

#include "papl/cli.hpp"

int main(int argc, char** argv) { return papl::cli::run(argc, argv, std::cout, std::cerr); }
