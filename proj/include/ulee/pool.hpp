#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include "ulee/env.hpp"

namespace ulee::env {

/// A benchmark pool: pre-sampled task descriptions shared read-only by trainers.
struct Pool {
  std::vector<std::shared_ptr<const EnvSpec>> specs;

  std::size_t size() const { return specs.size(); }
  bool empty() const { return specs.empty(); }
  /// Hash of the canonical records in order.
  std::uint64_t hash() const;
};

/// Spec i is sampled from a stream seeded with derive_seed(seed, i) and carries
/// that stream seed as its id.
Pool build_pool(const BenchConfig& bench, std::size_t count, std::uint64_t seed);

struct PoolSplit {
  Pool train;
  Pool eval;
};

/// Deterministic shuffle then split; eval receives round(eval_fraction * n).
PoolSplit split_pool(const Pool& pool, double eval_fraction, std::uint64_t seed);

/// True if any record appears in both pools.
bool pools_overlap(const Pool& a, const Pool& b);

/// Draws `count` specs without replacement (with replacement when count > size).
Pool sample_subset(const Pool& pool, std::size_t count, Rng& rng);

void save_pool(const Pool& pool, const std::filesystem::path& path);
Pool load_pool(const std::filesystem::path& path);

}  // namespace ulee::env
