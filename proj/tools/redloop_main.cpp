#include <iostream>

#include "redloop/cli.hpp"

int main(int argc, char** argv) { return redloop::run_cli(argc, argv, std::cout, std::cerr); }
