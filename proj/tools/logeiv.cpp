#include "logeiv/cli.hpp"

int main(int argc, char** argv) { return logeiv::cli::main(argc, argv); }
