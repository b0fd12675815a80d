#include <iostream>

#include "lrd/harness/cli.hpp"

int main(int argc, char** argv) { return lrd::harness::cli(argc, argv, std::cout, std::cerr); }
