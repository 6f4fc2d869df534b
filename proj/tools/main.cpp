#include "hyperagg/cli.hpp"

int main(int argc, char** argv) { return hyperagg::cli_dispatch(argc, argv); }
