#include <iostream>

#include "dedgan/cli.hpp"

int main(int argc, char** argv) { return dedgan::run_cli(argc, argv, std::cout, std::cerr); }
