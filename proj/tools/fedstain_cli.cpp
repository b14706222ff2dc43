#include <iostream>

#include "fedstain/commands.hpp"

int main(int argc, char** argv) { return fedstain::run_cli(argc, argv, std::cout, std::cerr); }
