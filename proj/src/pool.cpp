#include "ulee/pool.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "ulee/spec_io.hpp"

namespace ulee::env {

std::uint64_t Pool::hash() const {
  std::uint64_t h = fnv1a("ulee-pool");
  for (const auto& s : specs) {
    h = fnv1a(to_text(*s), h);
    h = fnv1a("\n", h);
  }
  return h;
}

Pool build_pool(const BenchConfig& bench, std::size_t count, std::uint64_t seed) {
  validate(bench);
  Pool pool;
  pool.specs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto stream_seed = derive_seed(seed, i);
    Rng rng(stream_seed);
    auto spec = sample_env_spec(rng, bench);
    spec.seed = stream_seed;
    pool.specs.push_back(std::make_shared<const EnvSpec>(std::move(spec)));
  }
  return pool;
}

PoolSplit split_pool(const Pool& pool, double eval_fraction, std::uint64_t seed) {
  if (eval_fraction < 0.0 || eval_fraction > 1.0) throw ConfigError("eval fraction must lie in [0, 1]");
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5917ULL));
  shuffle(order.begin(), order.end(), rng);
  const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(pool.size())));
  PoolSplit out;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_eval ? out.eval : out.train).specs.push_back(pool.specs[order[i]]);
  return out;
}

bool pools_overlap(const Pool& a, const Pool& b) {
  std::unordered_set<std::string> seen;
  for (const auto& s : a.specs) seen.insert(to_text(*s));
  for (const auto& s : b.specs)
    if (seen.count(to_text(*s))) return true;
  return false;
}

Pool sample_subset(const Pool& pool, std::size_t count, Rng& rng) {
  if (pool.empty()) throw ContractViolation("cannot sample from an empty pool");
  Pool out;
  if (count <= pool.size()) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < count; ++i) {
      auto j = i + static_cast<std::size_t>(uniform_int(rng, static_cast<int>(pool.size() - i)));
      std::swap(order[i], order[j]);
      out.specs.push_back(pool.specs[order[i]]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i)
      out.specs.push_back(pool.specs[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(pool.size())))]);
  }
  return out;
}

void save_pool(const Pool& pool, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write pool file " + path.string());
  for (const auto& s : pool.specs) os << to_text(*s) << '\n';
}

Pool load_pool(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read pool file " + path.string());
  Pool pool;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    pool.specs.push_back(std::make_shared<const EnvSpec>(spec_from_text(line)));
  }
  return pool;
}

}  // namespace ulee::env
