#include <iostream>

#include "clipnet/cli.hpp"

int main(int argc, char** argv) {
    return clipnet::cli_main(argc, argv, std::cout, std::cerr);
}
