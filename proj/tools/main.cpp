#include <iostream>

#include "tfd/cli.hpp"

int main(int argc, char** argv) { return tfd::run_cli(argc, argv, std::cout, std::cerr); }
