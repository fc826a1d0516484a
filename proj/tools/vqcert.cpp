#include <iostream>

#include "vqcert/cli.hpp"

int main(int argc, char** argv) { return vqcert::cli::cli_main(argc, argv, std::cout, std::cerr); }
