#include <iostream>

#include "flowfuse/cli.hpp"

int main(int argc, char** argv) { return flowfuse::cli::run(argc, argv, std::cout, std::cerr); }
