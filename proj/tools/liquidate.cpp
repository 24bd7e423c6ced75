#include "liq/cli_app.hpp"

int main(int argc, char** argv) { return liq::cli::run(argc, argv); }
