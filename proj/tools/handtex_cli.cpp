#include "handtex/cli.hpp"

int main(int argc, char** argv) { return handtex::run_cli(argc, argv); }
