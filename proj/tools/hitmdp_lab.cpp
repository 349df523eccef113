#include "hitmdp/cli/cli.h"

int main(int argc, char** argv) { return hitmdp::cli::main_entry(argc, argv); }
