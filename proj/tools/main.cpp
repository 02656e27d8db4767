#include "strmac/cli.hpp"

int main(int argc, char** argv) {
    return strmac::cli::run({argv + 1, argv + argc});
}
