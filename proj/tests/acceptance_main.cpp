#include "mfc/runner.hpp"
int main() { return 0; }
