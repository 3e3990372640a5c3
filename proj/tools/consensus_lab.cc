#include "consensus_lab/cli/commands.h"

int main(int argc, char** argv) { return consensus_lab::cli::run_cli(argc, argv); }
