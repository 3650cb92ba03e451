#include "ruleforge/cli.hpp"

int main(int argc, char** argv) { return ruleforge::dispatch(argc, argv); }
