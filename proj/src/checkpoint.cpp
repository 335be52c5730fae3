#include "ctxbias/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ctxbias {

namespace {

constexpr char kMagic[4] = {'C', 'T', 'X', 'B'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    check(pos + n <= bytes.size(), "checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},       {"model_dim", c.model_dim},
          {"num_layers", c.num_layers},       {"num_heads", c.num_heads},
          {"feature_dim", c.feature_dim},     {"max_seq_len", c.max_seq_len},
          {"num_obs_symbols", c.num_obs_symbols}, {"lora_rank", c.lora_rank},
          {"lora_alpha", c.lora_alpha},       {"anchor_position", c.anchor_position},
          {"feature_slots", c.feature_slots},
          {"pad_token", c.pad_token},
          {"eos_token", c.eos_token},         {"sep_token", c.sep_token},
          {"prompt_token", c.prompt_token}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.num_obs_symbols = j.at("num_obs_symbols").get<int>();
  c.lora_rank = j.at("lora_rank").get<int>();
  c.lora_alpha = j.at("lora_alpha").get<float>();
  c.anchor_position = j.at("anchor_position").get<int>();
  c.feature_slots = j.at("feature_slots").get<int>();
  c.pad_token = j.at("pad_token").get<int>();
  c.eos_token = j.at("eos_token").get<int>();
  c.sep_token = j.at("sep_token").get<int>();
  c.prompt_token = j.at("prompt_token").get<int>();
  c.validate();
  return c;
}

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {  // std::map: canonical name order
    put_u64(out, name.size());
    out.append(name);
    put_u64(out, t.shape.size());
    for (int64_t d : t.shape) put_u64(out, static_cast<uint64_t>(d));
    for (float f : t.data) put_f32(out, f);
  }
  std::string meta;
  for (const auto& [k, v] : metadata) {
    check(k.find('=') == std::string::npos && k.find('\n') == std::string::npos,
          "checkpoint: bad metadata key " + k);
    check(v.find('\n') == std::string::npos, "checkpoint: metadata value has newline");
    meta += k;
    meta += '=';
    meta += v;
    meta += '\n';
  }
  put_u64(out, meta.size());
  out.append(meta);
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r{bytes};
  check(r.str(4) == std::string(kMagic, 4), "checkpoint: bad magic");
  uint32_t version = r.u32();
  check(version == kVersion,
        "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  uint64_t count = r.u64();
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u64());
    uint64_t rank = r.u64();
    check(rank <= 4, "checkpoint: implausible tensor rank");
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint64_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int64_t>(r.u64()));
      numel *= shape.back();
    }
    Tensor t;
    t.shape = shape;
    t.data.resize(static_cast<size_t>(numel));
    for (float& f : t.data) f = r.f32();
    check(ckpt.tensors.emplace(name, std::move(t)).second,
          "checkpoint: duplicate tensor " + name);
  }
  std::string meta = r.str(r.u64());
  check(r.pos == bytes.size(), "checkpoint: trailing bytes");
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    size_t eq = line.find('=');
    check(eq != std::string::npos, "checkpoint: bad metadata line");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return ckpt;
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    check(f.good(), "cannot open for writing: " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    check(f.good(), "write failed: " + tmp);
  }
  check(std::rename(tmp.c_str(), path.c_str()) == 0, "rename failed: " + path);
}

void Checkpoint::save(const std::string& path) const {
  atomic_write_file(path, serialize());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

Checkpoint make_checkpoint(const PolicyModel& model, const std::string& stage,
                           uint64_t config_hash, uint64_t seed, int step) {
  Checkpoint ckpt;
  ckpt.tensors = model.params;
  ckpt.metadata["stage"] = stage;
  ckpt.metadata["config_hash"] = std::to_string(config_hash);
  ckpt.metadata["seed"] = std::to_string(seed);
  ckpt.metadata["step"] = std::to_string(step);
  ckpt.metadata["model_config"] = config_to_json(model.cfg).dump();
  return ckpt;
}

PolicyModel model_from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = config_from_json(nlohmann::json::parse(ckpt.meta("model_config")));
  PolicyModel probe = PolicyModel::create(cfg, 0);
  check(probe.params.size() == ckpt.tensors.size(),
        "checkpoint: parameter count mismatch");
  PolicyModel model;
  model.cfg = cfg;
  for (const auto& [name, t] : ckpt.tensors) {
    auto it = probe.params.find(name);
    check(it != probe.params.end(), "checkpoint: unexpected tensor " + name);
    check(it->second.same_shape(t), "checkpoint: shape mismatch for " + name);
    model.params[name] = t;
  }
  return model;
}

}  // namespace ctxbias
