#include "ubu/cli.hpp"

int main(int argc, char** argv) { return ubu::parse_and_dispatch(argc, argv); }
