#include "epigraph/cli/commands.hpp"

int main(int argc, char** argv) { return epigraph::cli::run(argc, argv); }
