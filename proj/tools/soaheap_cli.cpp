#include "soaheap/harness.hpp"

int main(int argc, char** argv) { return soaheap::harness::cli_main(argc, argv); }
