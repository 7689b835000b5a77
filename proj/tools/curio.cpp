#include "curio/cli/commands.hpp"

int main(int argc, char** argv) { return curio::cli::run(argc, argv); }
