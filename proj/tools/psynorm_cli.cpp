#include "psynorm/experiment.hpp"

int main(int argc, char** argv) { return psynorm::run_cli(argc, argv); }
