#include "yoto/cli.hpp"

int main(int argc, char** argv) { return yoto::dispatch(argc, argv); }
