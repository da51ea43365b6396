// Placeholder main; the full command surface lands with the CLI module.
#include <cstdio>

int main() {
  std::puts("ctxasr");
  return 0;
}
