#include <cstdio>

int main() {
  std::puts("psan: placeholder");
  return 0;
}
