#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dpsolve/linalg.hpp"

namespace dpsolve {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for the stream identified by (seed, key). Streams are keyed by data
/// partition, never by position, so reordering workers keeps each stream.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t key);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t key) : engine_(stream_seed(seed, key)) {}

  /// Uniform integer in [0, n), unbiased (rejection sampling).
  Index index_below(Index n);
  double uniform();
  double normal() { return normal_(engine_); }
  Vector normal_vector(Index n);
  Matrix normal_matrix(Index rows, Index cols);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// `batch` atom indices drawn uniformly with replacement from [0, n_atoms).
std::vector<Index> draw_batch(Rng& rng, Index n_atoms, Index batch);

}  // namespace dpsolve
