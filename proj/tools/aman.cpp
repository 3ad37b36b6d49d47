#include <iostream>

#include "aman/cli.hpp"

int main(int argc, char** argv) { return aman::run_cli(argc, argv, std::cout, std::cerr); }
