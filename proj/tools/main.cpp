#include <iostream>

#include "sagent/cli.hpp"

int main(int argc, char** argv) { return sagent::run_cli(argc, argv, std::cout, std::cerr); }
