#include "semd/pipeline.hpp"

int main(int argc, char** argv) { return semd::cli(argc, argv); }
