#include "prsr/cli.hpp"

int main(int argc, char** argv) { return prsr::cli::run(argc, argv); }
