#include "crackbench/cli.hpp"

int main(int argc, char** argv) { return crackbench::cli::run(argc, argv); }
