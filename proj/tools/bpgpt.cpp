#include "bpgpt/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return bpgpt::cli::run(argc, argv, std::cout, std::cerr); }
