#include "fpbench/cli.hpp"

int main(int argc, char** argv) { return fpbench::cli::dispatch(argc, argv); }
