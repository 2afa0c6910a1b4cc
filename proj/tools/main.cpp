#include "wsep_cli.hpp"

int main(int argc, char** argv) { return wsep::cli::run(argc, argv); }
