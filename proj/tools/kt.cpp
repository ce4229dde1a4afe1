#include "kt/cli.hpp"

int main(int argc, char** argv) { return kt::run_cli(argc, argv); }
