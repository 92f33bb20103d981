#include "ulee/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace ulee::io {

namespace {

using nlohmann::json;

template <class U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw std::runtime_error("truncated checkpoint");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

CheckpointHeader read_header_from(std::istream& is, const std::filesystem::path& path) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint: " + path.string());
  CheckpointHeader h;
  h.version = get_le<std::uint32_t>(is);
  if (h.version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(h.version));
  h.architecture_hash = get_le<std::uint64_t>(is);
  const auto rng_len = get_le<std::uint32_t>(is);
  h.rng_state.resize(rng_len);
  if (rng_len && !is.read(h.rng_state.data(), rng_len)) throw std::runtime_error("truncated checkpoint");
  h.num_scalars = get_le<std::uint64_t>(is);
  return h;
}

json policy_json(const policy::PolicyConfig& p) {
  return {{"n_shapes", p.n_shapes},       {"embed_dim", p.embed_dim},
          {"conv_channels", p.conv_channels}, {"hidden", p.hidden},
          {"head_hidden", p.head_hidden}, {"core", policy::to_string(p.core)},
          {"attention_window", p.attention_window}, {"attention_blocks", p.attention_blocks}};
}

policy::PolicyConfig policy_from_json(const json& j) {
  policy::PolicyConfig p;
  p.n_shapes = j.at("n_shapes");
  p.embed_dim = j.at("embed_dim");
  p.conv_channels = j.at("conv_channels");
  p.hidden = j.at("hidden");
  p.head_hidden = j.at("head_hidden").get<std::vector<int>>();
  p.core = policy::parse_core(j.at("core").get<std::string>()).value();
  p.attention_window = j.at("attention_window");
  p.attention_blocks = j.at("attention_blocks");
  return p;
}

}  // namespace

template <class T>
void save_params(const std::filesystem::path& path, const nn::ParamSet<T>& params, const Rng* rng) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 8);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint64_t>(os, params.architecture_hash());
  std::string state;
  if (rng) {
    std::ostringstream ss;
    ss << *rng;
    state = ss.str();
  }
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(state.size()));
  os.write(state.data(), static_cast<std::streamsize>(state.size()));
  put_le<std::uint64_t>(os, params.num_scalars());
  for (int i = 0; i < params.num_blocks(); ++i) {
    const auto& v = params.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v.data()[k])));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

template <class T>
CheckpointHeader load_params(const std::filesystem::path& path, nn::ParamSet<T>& params, Rng* rng) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  auto h = read_header_from(is, path);
  if (h.architecture_hash != params.architecture_hash())
    throw std::runtime_error("checkpoint architecture does not match: " + path.string());
  if (h.num_scalars != params.num_scalars()) throw std::runtime_error("checkpoint size mismatch: " + path.string());
  for (int i = 0; i < params.num_blocks(); ++i) {
    auto& v = params.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(is)));
  }
  if (rng && !h.rng_state.empty()) {
    std::istringstream ss(h.rng_state);
    ss >> *rng;
  }
  return h;
}

CheckpointHeader read_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_header_from(is, path);
}

void save_bundle(const std::filesystem::path& dir, const Bundle& meta, const policy::PolicyNet<float>& pi,
                 const policy::PolicyNet<float>* search, const curriculum::DifficultyPredictor<float>* dp) {
  std::filesystem::create_directories(dir);
  json m;
  m["format"] = "ulee-bundle/1";
  m["pretrain_steps"] = meta.pretrain_steps;
  m["seed"] = meta.seed;
  m["variant"] = meta.variant;
  json comps = json::array();
  save_params(dir / "policy.bin", pi.params());
  comps.push_back({{"role", "policy"}, {"file", "policy.bin"}, {"architecture_hash", pi.architecture_hash()},
                   {"config", policy_json(meta.policy)}});
  if (search) {
    save_params(dir / "search_policy.bin", search->params());
    comps.push_back({{"role", "search_policy"}, {"file", "search_policy.bin"},
                     {"architecture_hash", search->architecture_hash()}, {"config", policy_json(search->config())}});
  }
  if (dp) {
    save_params(dir / "predictor.bin", dp->params());
    const auto& pc = dp->config();
    comps.push_back({{"role", "predictor"}, {"file", "predictor.bin"}, {"architecture_hash", dp->architecture_hash()},
                     {"config", {{"grid_size", pc.grid_size}, {"n_shapes", pc.n_shapes}, {"embed_dim", pc.embed_dim},
                                 {"channels", pc.channels}, {"hidden", pc.hidden}}}});
  }
  m["components"] = comps;
  std::ofstream os(dir / "manifest.json");
  os << m.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing manifest in " + dir.string());
}

Bundle read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in " + dir.string());
  json m = json::parse(is);
  Bundle b;
  b.pretrain_steps = m.value("pretrain_steps", 0L);
  b.seed = m.value("seed", std::uint64_t{0});
  b.variant = m.value("variant", std::string{});
  for (const auto& c : m.at("components")) {
    const auto role = c.at("role").get<std::string>();
    if (role == "policy") b.policy = policy_from_json(c.at("config"));
    if (role == "predictor") {
      const auto& pc = c.at("config");
      b.predictor.grid_size = pc.at("grid_size");
      b.predictor.n_shapes = pc.at("n_shapes");
      b.predictor.embed_dim = pc.at("embed_dim");
      b.predictor.channels = pc.at("channels");
      b.predictor.hidden = pc.at("hidden").get<std::vector<int>>();
    }
  }
  return b;
}

policy::PolicyNet<float> load_policy(const std::filesystem::path& dir) {
  const auto meta = read_manifest(dir);
  policy::PolicyNet<float> net(meta.policy);
  load_params(dir / "policy.bin", net.params());
  return net;
}

template void save_params(const std::filesystem::path&, const nn::ParamSet<float>&, const Rng*);
template void save_params(const std::filesystem::path&, const nn::ParamSet<double>&, const Rng*);
template CheckpointHeader load_params(const std::filesystem::path&, nn::ParamSet<float>&, Rng*);
template CheckpointHeader load_params(const std::filesystem::path&, nn::ParamSet<double>&, Rng*);

}  // namespace ulee::io
