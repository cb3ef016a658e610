#include "commands.hpp"

int main(int argc, char** argv) { return hbnn::app::run_cli(argc, argv); }
