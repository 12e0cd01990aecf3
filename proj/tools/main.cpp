#include "hotmpm/cli.hpp"

int main(int argc, char** argv) { return hotmpm::cli_main(argc, argv); }
