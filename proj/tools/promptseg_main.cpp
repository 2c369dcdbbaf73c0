#include <iostream>

#include "promptseg/cli.hpp"

int main(int argc, char **argv)
{
  return promptseg::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
