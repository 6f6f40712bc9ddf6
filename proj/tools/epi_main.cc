#include "epi/cli.h"

int main(int argc, char** argv) { return epi::cli::run(argc, argv); }
