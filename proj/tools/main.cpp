#include "bfpa/cli.hpp"

int main(int argc, char** argv) { return bfpa::run_cli(argc, argv); }
