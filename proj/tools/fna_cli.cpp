#include <iostream>

#include "fna/cli.hpp"

int main(int argc, char** argv) { return fna::cli_main(argc, argv, std::cout, std::cerr); }
