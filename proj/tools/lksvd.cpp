#include <cstdio>

int main() {
  std::puts("lksvd: placeholder");
  return 0;
}
