#include <iostream>
#include <string>
#include <vector>

#include "dlsn/cli.hpp"

int main(int argc, char** argv) {
  return dlsn::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
