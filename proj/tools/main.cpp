#include "cdpo/cli.hpp"

int main(int argc, char** argv) { return cdpo::run_cli(argc, argv); }
