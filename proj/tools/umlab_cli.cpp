#include "umlab/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return umlab::cli::run(argc, argv, std::cout, std::cerr); }
