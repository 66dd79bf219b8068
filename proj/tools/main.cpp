#include <string>
#include <vector>

#include "plm/cli.hpp"

int main(int argc, char** argv) {
  return plm::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
