#include "miscal/cli.hpp"

int main(int argc, char** argv) { return miscal::cli_main(argc, argv); }
