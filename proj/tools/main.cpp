#include "cli.hpp"

int main(int argc, char** argv) { return mixgraph::cli::cli_main(argc, argv); }
