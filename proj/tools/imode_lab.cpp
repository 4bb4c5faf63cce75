#include "imode/harness.hpp"

int main(int argc, char** argv) { return imode::run_cli(argc, argv); }
