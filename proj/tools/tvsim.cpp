#include "tvsim/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tvsim::run_cli(args, std::cout, std::cerr);
}
