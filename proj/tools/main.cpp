#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "translico/cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return translico::run_cli(args, std::cout, std::cerr);
}
