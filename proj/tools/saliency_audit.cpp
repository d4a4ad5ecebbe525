#include "saliency_audit/cli/commands.hpp"
#include "saliency_audit/common.hpp"

int main(int argc, char** argv) {
  sa::retain_heap_memory();
  return sa::cli::run(argc, argv);
}
