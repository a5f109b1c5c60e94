#include <iostream>

#include "ddln/cli.hpp"

int main(int argc, char** argv) { return ddln::cli_main(argc, argv, std::cout, std::cerr); }
