#include "vit3d/cli.hpp"

int main(int argc, char** argv) { return vit3d::cli_main(argc, argv); }
