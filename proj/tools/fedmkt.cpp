#include "fedmkt/cli.hpp"

int main(int argc, char** argv) { return fedmkt::run_cli(argc, argv); }
