#include <iostream>

#include "aidflow/cli.hpp"

int main(int argc, char** argv) { return aidflow::run_cli(argc, argv, std::cout, std::cerr); }
