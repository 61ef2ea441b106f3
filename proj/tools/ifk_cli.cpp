#include "ifk/cli.hpp"

int main(int argc, char** argv) { return ifk::run_cli(argc, argv); }
