#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "sbcq/app/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reallocates the same batch-sized buffers every iteration; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  return sbcq::app::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
