#include "gfl/cli.hpp"

int main(int argc, char** argv) { return gfl::run(argc, argv); }
