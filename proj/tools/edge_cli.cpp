#include <iostream>

#include "edge/cli.hpp"

int main(int argc, char** argv) { return edge::run_cli(argc, argv, std::cout, std::cerr); }
