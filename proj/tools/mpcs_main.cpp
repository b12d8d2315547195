#include "mpcs/cli.hpp"

int main(int argc, char** argv) { return mpcs::cli::run(argc, argv); }
