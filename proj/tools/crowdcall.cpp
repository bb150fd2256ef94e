#include "crowdcall/cli.hpp"

int main(int argc, char** argv) { return crowdcall::cli::run(argc, argv); }
