#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kblab/model.hpp"
#include "kblab/trainer.hpp"
#include "kblab/vocab.hpp"

namespace kblab {

// Self-describing container: magic + version, a JSON header (model config,
// vocab, train-state scalars), then raw little-endian f64 tensors in
// visitation order. Loading fails loudly on any mismatch.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> vocab_tokens;
  Parameters params;

  // train-state snapshot
  std::vector<double> importance;
  long epoch = 0;
  long step = 0;
  long adam_t = 0;
  Parameters adam_m, adam_v;
  std::string rng_state;
  double best_f1 = -1.0;
  double best_em = 0.0;
  long best_epoch = 0;
  long best_step = 0;

  Vocab vocab() const { return Vocab::from_tokens(vocab_tokens); }

  TrainState train_state(const TrainConfig& cfg) const {
    TrainState st;
    st.importance = importance;
    st.epoch = epoch;
    st.step = step;
    st.adam = AdamState::init(config);
    st.adam.t = adam_t;
    st.adam.m = adam_m;
    st.adam.v = adam_v;
    st.rng = Rng(cfg.seed);
    if (!rng_state.empty()) st.rng.load_state(rng_state);
    st.best_f1 = best_f1;
    st.best_em = best_em;
    st.best_epoch = best_epoch;
    st.best_step = best_step;
    return st;
  }
};

namespace detail {

constexpr char kCkptMagic[8] = {'K', 'B', 'L', 'A', 'B', 'C', 'K', 'P'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr const char* kCkptFormatTag = "kblab-checkpoint-v1";

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline void write_tensors(std::ostream& os, const Parameters& p) {
  const auto refs = tensor_refs(p);
  write_u32(os, static_cast<std::uint32_t>(refs.size()));
  for (const auto& ref : refs) {
    write_u32(os, static_cast<std::uint32_t>(ref.name.size()));
    os.write(ref.name.data(), static_cast<std::streamsize>(ref.name.size()));
    write_u32(os, static_cast<std::uint32_t>(ref.tensor->rows()));
    write_u32(os, static_cast<std::uint32_t>(ref.tensor->cols()));
    os.write(reinterpret_cast<const char*>(ref.tensor->data()),
             static_cast<std::streamsize>(sizeof(double)) * ref.tensor->size());
  }
}

inline void read_tensors(std::istream& is, Parameters& p, const std::string& section) {
  const auto refs = tensor_refs(p);
  const std::uint32_t count = read_u32(is);
  if (count != refs.size()) {
    throw std::runtime_error(std::string(kCkptFormatTag) + ": " + section + " has " +
                             std::to_string(count) + " tensors, expected " +
                             std::to_string(refs.size()));
  }
  for (const auto& ref : refs) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (name != ref.name) {
      throw std::runtime_error(std::string(kCkptFormatTag) + ": " + section + " tensor '" + name +
                               "' where '" + ref.name + "' was expected");
    }
    const std::uint32_t rows = read_u32(is);
    const std::uint32_t cols = read_u32(is);
    if (rows != ref.tensor->rows() || cols != ref.tensor->cols()) {
      throw std::runtime_error(std::string(kCkptFormatTag) + ": tensor " + name + " has shape " +
                               std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                               std::to_string(ref.tensor->rows()) + "x" +
                               std::to_string(ref.tensor->cols()));
    }
    is.read(reinterpret_cast<char*>(ref.tensor->data()),
            static_cast<std::streamsize>(sizeof(double)) * ref.tensor->size());
    if (!is) throw std::runtime_error(std::string(kCkptFormatTag) + ": truncated tensor " + name);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_u32(os, detail::kCkptVersion);

  nlohmann::json header;
  header["format"] = detail::kCkptFormatTag;
  header["model"] = {{"d_model", ckpt.config.d_model},
                     {"n_layers", ckpt.config.n_layers},
                     {"n_heads", ckpt.config.n_heads},
                     {"max_seq_len", ckpt.config.max_seq_len},
                     {"vocab_size", ckpt.config.vocab_size}};
  header["vocab"] = ckpt.vocab_tokens;
  header["train"] = {{"epoch", ckpt.epoch},       {"step", ckpt.step},
                     {"adam_t", ckpt.adam_t},     {"rng", ckpt.rng_state},
                     {"best_f1", ckpt.best_f1},   {"best_em", ckpt.best_em},
                     {"best_epoch", ckpt.best_epoch}, {"best_step", ckpt.best_step},
                     {"n", ckpt.importance.size()}};
  const std::string header_str = header.dump();
  detail::write_u64(os, header_str.size());
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  detail::write_tensors(os, ckpt.params);
  detail::write_tensors(os, ckpt.adam_m);
  detail::write_tensors(os, ckpt.adam_v);
  detail::write_u64(os, ckpt.importance.size());
  os.write(reinterpret_cast<const char*>(ckpt.importance.data()),
           static_cast<std::streamsize>(sizeof(double)) * ckpt.importance.size());
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path + " is not a " + detail::kCkptFormatTag + " file (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(is);
  if (version != detail::kCkptVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t header_len = detail::read_u64(is);
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw std::runtime_error(path + ": truncated header");
  const nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.value("format", "") != detail::kCkptFormatTag) {
    throw std::runtime_error(path + ": unexpected format tag '" + header.value("format", "") + "'");
  }

  Checkpoint ckpt;
  const auto& m = header.at("model");
  ckpt.config.d_model = m.at("d_model").get<int>();
  ckpt.config.n_layers = m.at("n_layers").get<int>();
  ckpt.config.n_heads = m.at("n_heads").get<int>();
  ckpt.config.max_seq_len = m.at("max_seq_len").get<int>();
  ckpt.config.vocab_size = m.at("vocab_size").get<int>();
  ckpt.config.validate();
  ckpt.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
  if (static_cast<int>(ckpt.vocab_tokens.size()) + Vocab::kNumSpecials != ckpt.config.vocab_size) {
    throw std::runtime_error(path + ": vocab size " + std::to_string(ckpt.vocab_tokens.size()) +
                             " inconsistent with model vocab_size " +
                             std::to_string(ckpt.config.vocab_size));
  }
  const auto& t = header.at("train");
  ckpt.epoch = t.at("epoch").get<long>();
  ckpt.step = t.at("step").get<long>();
  ckpt.adam_t = t.at("adam_t").get<long>();
  ckpt.rng_state = t.at("rng").get<std::string>();
  ckpt.best_f1 = t.at("best_f1").get<double>();
  ckpt.best_em = t.at("best_em").get<double>();
  ckpt.best_epoch = t.at("best_epoch").get<long>();
  ckpt.best_step = t.at("best_step").get<long>();

  ckpt.params = Parameters::zeros(ckpt.config);
  ckpt.adam_m = Parameters::zeros(ckpt.config);
  ckpt.adam_v = Parameters::zeros(ckpt.config);
  detail::read_tensors(is, ckpt.params, "params");
  detail::read_tensors(is, ckpt.adam_m, "adam_m");
  detail::read_tensors(is, ckpt.adam_v, "adam_v");
  const std::uint64_t n = detail::read_u64(is);
  const std::uint64_t expected_n = t.at("n").get<std::uint64_t>();
  if (n != expected_n) {
    throw std::runtime_error(path + ": importance length " + std::to_string(n) +
                             " disagrees with header " + std::to_string(expected_n));
  }
  ckpt.importance.resize(n);
  is.read(reinterpret_cast<char*>(ckpt.importance.data()),
          static_cast<std::streamsize>(sizeof(double)) * static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error(path + ": truncated importance section");
  return ckpt;
}

inline Checkpoint make_checkpoint(const ModelConfig& cfg, const Vocab& vocab,
                                  const Parameters& params, const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab_tokens = vocab.tokens();
  ckpt.params = params;
  ckpt.importance = state.importance;
  ckpt.epoch = state.epoch;
  ckpt.step = state.step;
  ckpt.adam_t = state.adam.t;
  ckpt.adam_m = state.adam.m;
  ckpt.adam_v = state.adam.v;
  ckpt.rng_state = state.rng.save_state();
  ckpt.best_f1 = state.best_f1;
  ckpt.best_em = state.best_em;
  ckpt.best_epoch = state.best_epoch;
  ckpt.best_step = state.best_step;
  return ckpt;
}

}  // namespace kblab
