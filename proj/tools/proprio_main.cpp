#include "proprio/cli_app.hpp"

int main(int argc, char** argv) { return proprio::cli::run(argc, argv); }
