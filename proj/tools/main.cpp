#include "commands.hpp"

int main(int argc, char** argv) { return rnnt::cli::run(std::vector<std::string>(argv, argv + argc)); }
