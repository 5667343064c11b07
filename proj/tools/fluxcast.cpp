#include "fluxcast/cli.hpp"

int main(int argc, char** argv) { return fluxcast::cli_main(argc, argv); }
