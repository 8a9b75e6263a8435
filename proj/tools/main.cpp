#include "tli/cli.hpp"

int main(int argc, char** argv) { return tli::cli::dispatch(argc, argv); }
