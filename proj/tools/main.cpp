#include "gnnmoe/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return gnnmoe::cli::run(argc, argv, std::cout, std::cerr); }
