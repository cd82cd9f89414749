#include "fso/cli.hpp"

int main(int argc, char** argv) { return fso::cli_main(argc, argv); }
