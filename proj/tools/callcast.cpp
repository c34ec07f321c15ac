#include "callcast/cli.hpp"

int main(int argc, char** argv) { return callcast::cli::run_cli(argc, argv); }
