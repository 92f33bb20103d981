#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ulee/nn.hpp"
#include "ulee/predictor.hpp"
#include "ulee/seqpolicy.hpp"

namespace ulee::io {

inline constexpr char kCheckpointMagic[8] = {'U', 'L', 'E', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t architecture_hash = 0;
  std::string rng_state;  // textual engine state, empty if none
  std::uint64_t num_scalars = 0;
};

/// Header followed by every parameter block as float32 little-endian, in
/// declaration order (column-major within a block).
template <class T>
void save_params(const std::filesystem::path& path, const nn::ParamSet<T>& params, const Rng* rng = nullptr);

/// Verifies magic, version, architecture hash and size before overwriting
/// `params`. Restores the rng state when `rng` is given and one was saved.
template <class T>
CheckpointHeader load_params(const std::filesystem::path& path, nn::ParamSet<T>& params, Rng* rng = nullptr);

CheckpointHeader read_header(const std::filesystem::path& path);

/// Directory bundle: policy.bin, search_policy.bin, predictor.bin and a
/// manifest.json describing the architectures.
struct Bundle {
  policy::PolicyConfig policy;
  curriculum::PredictorConfig predictor;
  long pretrain_steps = 0;
  std::uint64_t seed = 0;
  std::string variant;
};

void save_bundle(const std::filesystem::path& dir, const Bundle& meta, const policy::PolicyNet<float>& pi,
                 const policy::PolicyNet<float>* search, const curriculum::DifficultyPredictor<float>* dp);

Bundle read_manifest(const std::filesystem::path& dir);

/// Loads the pre-trained policy of a bundle.
policy::PolicyNet<float> load_policy(const std::filesystem::path& dir);

}  // namespace ulee::io
