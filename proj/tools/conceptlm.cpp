#include "conceptlm/cli.hpp"

int main(int argc, char** argv) { return conceptlm::cli::main(argc, argv); }
