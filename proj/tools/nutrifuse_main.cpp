#include "nutrifuse/cli.hpp"

int main(int argc, char** argv) { return nf::run_cli(argc, argv); }
