#include "mvood/cli.hpp"

int main(int argc, char** argv) { return mvood::execute(argc, argv); }
