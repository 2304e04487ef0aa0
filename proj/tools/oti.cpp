#include <iostream>

#include "oti/cli.hpp"

int main(int argc, char** argv) { return oti::cli::main(argc, argv, std::cout, std::cerr); }
