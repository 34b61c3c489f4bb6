#include "tas/cli.hpp"

int main(int argc, char** argv) { return tas::cli::run(argc, argv); }
