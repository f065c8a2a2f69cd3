#include <iostream>

#include "stamp/cli.hpp"

int main(int argc, char** argv) { return stamp::cli::run(argc, argv, std::cout, std::cerr); }
