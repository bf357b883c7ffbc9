#include <string>
#include <vector>

#include "simrec/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return simrec::cli::run_subcommand(args);
}
