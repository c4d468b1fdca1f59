#include <iostream>

#include "vppflex/cli.hpp"

int main(int argc, char** argv) { return vppflex::cli::run(argc, argv, std::cout, std::cerr); }
