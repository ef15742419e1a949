#include "nlsid/cli.hpp"

int main(int argc, char** argv) { return nlsid::cli::main_entry(argc, argv); }
