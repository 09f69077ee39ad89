#include <charcnn/cli.hpp>

int main(int argc, char** argv) { return charcnn::cli::run(argc, argv); }
