#include <flowscene/cli.hpp>

int main(int argc, char** argv) { return flowscene::cli::run_command(argc, argv); }
