#include "hydrolab/cli.hpp"

int main(int argc, char** argv) { return hydrolab::cli::dispatch(argc, argv); }
