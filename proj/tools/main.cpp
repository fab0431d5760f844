#include "mlnmt/cli.hpp"

int main(int argc, char** argv) { return mlnmt::cli::run(argc, argv); }
