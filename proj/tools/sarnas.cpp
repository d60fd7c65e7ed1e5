#include <iostream>

#include "sarnas/commands.hpp"

int main(int argc, char** argv) { return sarnas::run_cli(argc, argv, std::cout, std::cerr); }
