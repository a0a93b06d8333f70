#include "lensnvs/cli.hpp"

int main(int argc, char** argv) { return lensnvs::cli::run(argc, argv); }
