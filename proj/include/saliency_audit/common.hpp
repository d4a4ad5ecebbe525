#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace sa {

// Row-major so that a [frames x bins] matrix is laid out frame by frame, the
// same order the tensor file format uses.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Malformed arguments: wrong shapes, out-of-range indices, bad configs.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf or otherwise diverged.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer. Child seeds are derived from (root, stream, index) so
// that work split across threads draws the same numbers in any order.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(root) ^ stream) ^ index);
}

}  // namespace sa

namespace sa {

/// Keeps freed memory in the process heap instead of returning it to the OS.
/// Training allocates and frees the same large activations every step, and
/// fresh pages cost more than the arithmetic on them. Call once from main().
void retain_heap_memory();

}  // namespace sa
