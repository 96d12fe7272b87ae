#include "hashfield/cli.hpp"

int main(int argc, char** argv) { return hashfield::run(argc, argv); }
