#include "lipread/cli.h"

int main(int argc, char** argv) { return lipread::run_cli(argc, argv); }
