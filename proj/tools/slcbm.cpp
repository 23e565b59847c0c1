#include "slcbm/cli.hpp"

int main(int argc, char** argv) { return slcbm::cli::run(argc, argv); }
