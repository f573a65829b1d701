#include "hdeval/cli.hpp"

int main(int argc, char** argv) { return hdeval::run_cli(argc, argv); }
