// CLI entry point; subcommands are wired up as modules land.
#include <cstdio>

int main() {
  std::puts("bayesvla: no subcommand given");
  return 2;
}
