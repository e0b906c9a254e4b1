#include <iostream>

#include "urbannav/cli.h"

int main(int argc, char** argv) {
  return urbannav::RunCli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
