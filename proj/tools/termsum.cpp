#include "termsum/cli.hpp"

int main(int argc, char** argv) {
    return termsum::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
