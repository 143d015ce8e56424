#include "commands.hpp"

int main(int argc, char** argv) { return korol::cli::run(argc, argv); }
