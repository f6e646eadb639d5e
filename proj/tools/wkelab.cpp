#include "wke/cli.hpp"

int main(int argc, char** argv) { return wke::cli::dispatch(argc, argv); }
