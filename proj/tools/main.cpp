#include "fibsim/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return fibsim::cli::run(argc, argv, std::cout, std::cerr);
}
