#include <iostream>

#include "pfsa/cli.hpp"

int main(int argc, char** argv) { return pfsa::cli::run(argc, argv, std::cout, std::cerr); }
