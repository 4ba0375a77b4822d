#include <cstdio>
int main() { std::puts("enet cli: not yet wired"); return 1; }
