#include <iostream>

#include "msnmt/cli.hpp"

int main(int argc, char** argv) { return msnmt::run_cli(argc, argv, std::cout, std::cerr); }
