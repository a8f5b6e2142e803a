#include "aggfair/cli.hpp"

int main(int argc, char** argv) { return aggfair::cli::run_cli(argc, argv); }
