#include <iostream>

#include "vslnet/cli.hpp"

int main(int argc, char** argv) { return vslnet::run_cli(argc, argv, std::cout, std::cerr); }
