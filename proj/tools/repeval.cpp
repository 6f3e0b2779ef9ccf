#include "repeval/cli.hpp"

int main(int argc, char** argv) { return repeval::cli::run(argc, argv); }
