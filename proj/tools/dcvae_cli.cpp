#include <iostream>

#include "dcvae/cli/commands.hpp"

int main(int argc, char** argv) { return dcvae::cli::run_cli(argc, argv, std::cout, std::cerr); }
