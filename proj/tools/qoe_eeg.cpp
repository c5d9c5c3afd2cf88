#include "qoe_eeg/cli.hpp"

int main(int argc, char** argv) { return qoe::cli::run(argc, argv); }
