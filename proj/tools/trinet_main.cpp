#include "trinet/commands.hpp"

int main(int argc, char** argv) { return trinet::run_cli(argc, argv); }
