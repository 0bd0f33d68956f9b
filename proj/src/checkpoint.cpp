// SPDX-License-Identifier: Apache-2.0
#include "passmatch/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "passmatch/util.hpp"

namespace passmatch {

namespace {

using nlohmann::json;

json encoder_config_to_json(const EncoderConfig& ec) {
  return json{{"d_model", ec.d_model},       {"n_heads", ec.n_heads},
              {"n_layers", ec.n_layers},     {"ffn_dim", ec.ffn_dim},
              {"max_len", ec.max_len},       {"vocab_size", ec.vocab_size},
              {"seed", ec.seed},             {"init_scale", ec.init_scale}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig ec;
  ec.d_model = j.at("d_model").get<int>();
  ec.n_heads = j.at("n_heads").get<int>();
  ec.n_layers = j.at("n_layers").get<int>();
  ec.ffn_dim = j.at("ffn_dim").get<int>();
  ec.max_len = j.at("max_len").get<int>();
  ec.vocab_size = j.at("vocab_size").get<int>();
  ec.seed = j.at("seed").get<std::uint64_t>();
  ec.init_scale = j.at("init_scale").get<double>();
  return ec;
}

}  // namespace

void save_checkpoint(const Matcher& matcher, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& meta) {
  const MatcherConfig& cfg = matcher.config();
  json j;
  j["format_version"] = kCheckpointVersion;
  j["architecture"] = cfg.architecture;
  j["config"] = json{{"architecture", cfg.architecture},
                     {"shared_weights", cfg.shared_weights},
                     {"cdv_rnn", cfg.cdv_rnn},
                     {"encoder", encoder_config_to_json(cfg.encoder)}};
  j["vocab"] = matcher.vocab().tokens();

  json tensors = json::object();
  for (const auto& [name, t] : matcher.named_parameters()) {
    json entry;
    entry["shape"] = t.shape();
    auto span = t.data();
    entry["data"] = std::vector<Scalar>(span.begin(), span.end());
    tensors[name] = std::move(entry);
  }
  j["tensors"] = std::move(tensors);

  json jm = json::object();
  for (const auto& [k, v] : meta) jm[k] = v;
  // Persist the training phase so a reloaded two-phase matcher scores with
  // the pooling it was trained under.
  if (matcher.two_phase() && jm.find("phase") == jm.end()) {
    jm["phase"] = matcher.frozen() ? "frozen" : "finetune";
  }
  j["meta"] = std::move(jm);

  std::vector<std::uint8_t> bytes = json::to_msgpack(j);
  atomic_write_file(path, std::string(bytes.begin(), bytes.end()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::string raw = read_text_file(path);
  json j;
  try {
    j = json::from_msgpack(raw);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() +
                             ": not a valid checkpoint file (" + e.what() + ")");
  }
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
    throw std::runtime_error("checkpoint " + path.string() +
                             ": missing format_version");
  }
  const int version = j["format_version"].get<int>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() +
                             ": unsupported format_version " +
                             std::to_string(version) + " (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }

  MatcherConfig cfg;
  const json& jc = j.at("config");
  cfg.architecture = jc.at("architecture").get<std::string>();
  cfg.shared_weights = jc.at("shared_weights").get<bool>();
  cfg.cdv_rnn = jc.at("cdv_rnn").get<std::string>();
  cfg.encoder = encoder_config_from_json(jc.at("encoder"));
  cfg.validate();

  Vocab vocab = Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>());
  std::unique_ptr<Matcher> matcher = make_matcher(cfg, vocab);

  const json& tensors = j.at("tensors");
  std::vector<NamedTensor> params = matcher->named_parameters();
  if (tensors.size() != params.size()) {
    throw std::runtime_error(
        "checkpoint " + path.string() + ": holds " +
        std::to_string(tensors.size()) + " tensors, architecture '" +
        cfg.architecture + "' expects " + std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw std::runtime_error("checkpoint " + path.string() +
                               ": missing tensor '" + name + "'");
    }
    const auto shape = it->at("shape").get<std::vector<int>>();
    if (shape != t.shape()) {
      throw std::runtime_error("checkpoint " + path.string() + ": tensor '" +
                               name + "' shape mismatch (file " +
                               shape_string(shape) + ", model " +
                               shape_string(t.shape()) + ")");
    }
    const auto data = it->at("data").get<std::vector<Scalar>>();
    if (data.size() != t.numel()) {
      throw std::runtime_error("checkpoint " + path.string() + ": tensor '" +
                               name + "' data length mismatch");
    }
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }

  LoadedCheckpoint out;
  if (j.contains("meta")) {
    for (const auto& [k, v] : j["meta"].items()) {
      out.meta[k] = v.get<std::string>();
    }
  }
  if (matcher->two_phase()) {
    auto it = out.meta.find("phase");
    matcher->set_frozen(it != out.meta.end() && it->second == "frozen");
  }
  out.matcher = std::move(matcher);
  return out;
}

std::uint64_t checkpoint_fingerprint(const std::filesystem::path& path) {
  return fnv1a64(read_text_file(path));
}

}  // namespace passmatch
