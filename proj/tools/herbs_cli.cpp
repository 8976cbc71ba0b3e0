#include "herbs/cli.hpp"

int main(int argc, char** argv) { return herbs::cli::run_cli(argc, argv); }
