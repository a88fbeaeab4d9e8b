#include "bmfluct/cli.hpp"

int main(int argc, char** argv) { return bmfluct::cli::main(argc, argv); }
