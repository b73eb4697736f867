#include <iostream>
#include <string>
#include <vector>

#include "metacore/experiments.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return metacore::experiments::run_cli(args, std::cout, std::cerr);
}
