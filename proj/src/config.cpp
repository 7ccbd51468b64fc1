#include "rnnt/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <fstream>
#include <functional>
#include <sstream>

namespace rnnt {

namespace {

struct Key {
  std::string section;
  std::string name;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& s) {
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw boost::bad_lexical_cast();
  } else {
    return boost::lexical_cast<T>(s);
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>)
    return v ? "true" : "false";
  else
    return fmt::format("{}", v);
}

// A key bound to a plain field reached through `field`.
template <typename T, typename F>
Key scalar(std::string section, std::string name, std::string doc, F field) {
  return {std::move(section), std::move(name), std::move(doc),
          [field](const ExperimentConfig& c) { return format_value<T>(field(const_cast<ExperimentConfig&>(c))); },
          [field](ExperimentConfig& c, const std::string& s) { field(c) = parse_value<T>(s); }};
}

template <typename T>
std::string join(const std::vector<T>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

template <typename T>
std::vector<T> split(const std::string& s) {
  std::vector<std::string> parts;
  boost::split(parts, s, boost::is_any_of(","));
  std::vector<T> out;
  for (auto& p : parts) {
    boost::trim(p);
    if (!p.empty()) out.push_back(parse_value<T>(p));
  }
  return out;
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    using C = ExperimentConfig;
    std::vector<Key> k;
    k.push_back(scalar<Index>("model", "feature_dim", "input width; must equal raw_dim * frontend_stack",
                              [](C& c) -> auto& { return c.model.feature_dim; }));
    k.push_back(scalar<Index>("model", "encoder_layers", "encoder LSTM layers",
                              [](C& c) -> auto& { return c.model.encoder_layers; }));
    k.push_back(scalar<Index>("model", "encoder_hidden", "encoder cell width",
                              [](C& c) -> auto& { return c.model.encoder_hidden; }));
    k.push_back(scalar<Index>("model", "encoder_proj", "encoder projection width",
                              [](C& c) -> auto& { return c.model.encoder_proj; }));
    k.push_back(scalar<Index>("model", "time_reduction_after", "encoder layers before frame stacking",
                              [](C& c) -> auto& { return c.model.time_reduction_after; }));
    k.push_back(scalar<Index>("model", "time_reduction_factor", "frames stacked by the reduction layer",
                              [](C& c) -> auto& { return c.model.time_reduction_factor; }));
    k.push_back(scalar<Index>("model", "prediction_layers", "prediction LSTM layers",
                              [](C& c) -> auto& { return c.model.prediction_layers; }));
    k.push_back(scalar<Index>("model", "prediction_hidden", "prediction cell width",
                              [](C& c) -> auto& { return c.model.prediction_hidden; }));
    k.push_back(scalar<Index>("model", "prediction_proj", "prediction projection width",
                              [](C& c) -> auto& { return c.model.prediction_proj; }));
    k.push_back(scalar<Index>("model", "embedding_dim", "label embedding width",
                              [](C& c) -> auto& { return c.model.embedding_dim; }));
    k.push_back(scalar<Index>("model", "joint_dim", "joint hidden width",
                              [](C& c) -> auto& { return c.model.joint_dim; }));
    k.push_back(scalar<Index>("model", "vocab_size", "labels, blank excluded",
                              [](C& c) -> auto& { return c.model.vocab_size; }));
    k.push_back({"model", "joint_mode", "concat or add",
                 [](const C& c) { return to_string(c.model.joint_mode); },
                 [](C& c, const std::string& s) { c.model.joint_mode = joint_mode_from_string(s); }});

    k.push_back(scalar<Index>("train", "batch_size", "utterances per step",
                              [](C& c) -> auto& { return c.train.batch_size; }));
    k.push_back(scalar<long>("train", "steps", "optimizer steps", [](C& c) -> auto& { return c.train.steps; }));
    k.push_back(scalar<long>("train", "eval_every", "steps between evaluations",
                             [](C& c) -> auto& { return c.train.eval_every; }));
    k.push_back(scalar<Real>("train", "learning_rate", "Adam learning rate after warmup",
                             [](C& c) -> auto& { return c.train.learning_rate; }));
    k.push_back(scalar<long>("train", "warmup_steps", "linear warmup length, 0 for none",
                             [](C& c) -> auto& { return c.train.warmup_steps; }));
    k.push_back(scalar<Real>("train", "clip_norm", "global gradient norm limit, <= 0 disables",
                             [](C& c) -> auto& { return c.train.clip_norm; }));
    k.push_back(scalar<std::uint64_t>("train", "seed", "initialization, batching and state sampling seed",
                                      [](C& c) -> auto& { return c.train.seed; }));
    k.push_back({"train", "state_strategy", "zero, rss, rss_encoder_only or rsp",
                 [](const C& c) { return to_string(c.train.state.kind); },
                 [](C& c, const std::string& s) { c.train.state.kind = state_kind_from_string(s); }});
    k.push_back(scalar<Real>("train", "pass_probability", "rsp: chance an utterance starts from a saved state",
                             [](C& c) -> auto& { return c.train.state.pass_probability; }));
    k.push_back(scalar<std::size_t>("train", "pool_capacity", "rsp: saved states kept",
                                    [](C& c) -> auto& { return c.train.state.pool_capacity; }));
    k.push_back({"train", "sampling", "uniform_domain, uniform_subdomain or count_weighted",
                 [](const C& c) { return to_string(c.train.sampling); },
                 [](C& c, const std::string& s) { c.train.sampling = sampling_kind_from_string(s); }});
    k.push_back(scalar<long>("train", "max_consecutive_divergences", "non-finite steps tolerated in a row",
                             [](C& c) -> auto& { return c.train.max_consecutive_divergences; }));
    k.push_back(scalar<long>("train", "checkpoint_every", "steps between checkpoints, 0 for final only",
                             [](C& c) -> auto& { return c.checkpoint_every; }));
    k.push_back(scalar<Index>("train", "eval_beam_width", "periodic eval beam; 1 with margin 0 is greedy",
                              [](C& c) -> auto& { return c.train.eval_decode.beam_width; }));
    k.push_back(scalar<Real>("train", "eval_adaptive_margin", "periodic eval pruning margin",
                             [](C& c) -> auto& { return c.train.eval_decode.adaptive_margin; }));

    k.push_back(scalar<Index>("data", "raw_dim", "raw frame width", [](C& c) -> auto& { return c.data.recipe.raw_dim; }));
    k.push_back(scalar<Index>("data", "vocab_size", "synthetic token inventory; must equal model vocab_size",
                              [](C& c) -> auto& { return c.data.recipe.vocab_size; }));
    k.push_back(scalar<Real>("data", "noise_std", "per-frame Gaussian noise",
                             [](C& c) -> auto& { return c.data.recipe.noise_std; }));
    k.push_back(scalar<Real>("data", "speaker_std", "per-utterance offset spread",
                             [](C& c) -> auto& { return c.data.recipe.speaker_std; }));
    k.push_back(scalar<std::uint64_t>("data", "seed", "prototype and corpus seed",
                                      [](C& c) -> auto& { return c.data.recipe.seed; }));
    k.push_back(scalar<Index>("data", "frontend_stack", "raw frames per feature frame",
                              [](C& c) -> auto& { return c.data.frontend.stack; }));
    k.push_back(scalar<Index>("data", "frontend_hop", "raw frames between feature frames",
                              [](C& c) -> auto& { return c.data.frontend.hop; }));
    k.push_back({"data", "domains", "comma list from search, farfield, telephony, youtube",
                 [](const C& c) { return join(c.data.domains); },
                 [](C& c, const std::string& s) { c.data.domains = split<std::string>(s); }});
    k.push_back(scalar<Index>("data", "train_utterances", "training utterances per domain",
                              [](C& c) -> auto& { return c.data.train_utterances; }));
    k.push_back(scalar<Index>("data", "test_utterances", "test utterances per domain",
                              [](C& c) -> auto& { return c.data.test_utterances; }));
    k.push_back({"data", "longform_factors", "concatenation factors of the long-form test sets",
                 [](const C& c) { return join(c.data.longform_factors); },
                 [](C& c, const std::string& s) { c.data.longform_factors = split<Index>(s); }});
    k.push_back(scalar<Index>("data", "longform_sources", "short utterances feeding each long-form set",
                              [](C& c) -> auto& { return c.data.longform_sources; }));
    k.push_back(scalar<Index>("data", "silence_frames", "feature frames of silence between pieces",
                              [](C& c) -> auto& { return c.data.silence_frames; }));

    k.push_back(scalar<Index>("decode", "beam_width", "hypotheses kept per frame",
                              [](C& c) -> auto& { return c.decode.beam_width; }));
    k.push_back(scalar<Real>("decode", "adaptive_margin", "log-prob margin below the best, inf disables",
                             [](C& c) -> auto& { return c.decode.adaptive_margin; }));
    k.push_back(scalar<int>("decode", "expansion_cap", "labels emitted per frame at most",
                            [](C& c) -> auto& { return c.decode.expansion_cap; }));
    return k;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    model.validate();
    train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (data.recipe.vocab_size != model.vocab_size)
    throw ConfigError(fmt::format("data.vocab_size {} differs from model.vocab_size {}", data.recipe.vocab_size,
                                  model.vocab_size));
  if (data.recipe.raw_dim * data.frontend.stack != model.feature_dim)
    throw ConfigError(fmt::format("model.feature_dim {} must equal raw_dim {} * frontend_stack {}", model.feature_dim,
                                  data.recipe.raw_dim, data.frontend.stack));
  if (data.frontend.stack < 1 || data.frontend.hop < 1) throw ConfigError("frontend stack and hop must be positive");
  if (data.domains.empty()) throw ConfigError("data.domains is empty");
  if (data.train_utterances < 0 || data.test_utterances < 0 || data.longform_sources < 0 || data.silence_frames < 0)
    throw ConfigError("data counts must be non-negative");
  for (Index f : data.longform_factors)
    if (f < 1) throw ConfigError("longform factors must be positive");
  if (decode.beam_width < 1 || decode.expansion_cap < 1 || !(decode.adaptive_margin >= 0))
    throw ConfigError("decode: beam_width and expansion_cap must be positive, margin non-negative");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
  select_domains(data);
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(fmt::format("key '{}' outside any section", section));
    for (const auto& [name, value] : body) {
      const auto it = std::find_if(keys().begin(), keys().end(),
                                   [&](const Key& k) { return k.section == section && k.name == name; });
      if (it == keys().end()) throw ConfigError(fmt::format("unknown key [{}] {}", section, name));
      const std::string raw = boost::trim_copy(value.data());
      try {
        it->set(config, raw);
      } catch (const std::exception&) {
        throw ConfigError(fmt::format("bad value for [{}] {}: '{}'", section, name, raw));
      }
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void write_config(std::ostream& os, const ExperimentConfig& config) {
  std::string section;
  for (const Key& k : keys()) {
    if (k.section != section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << "; " << k.doc << '\n' << k.name << " = " << k.get(config) << '\n';
  }
}

std::vector<DomainSpec> select_domains(const DataConfig& data) {
  const std::vector<DomainSpec> all = default_domains(data.recipe);
  std::vector<DomainSpec> out;
  for (const auto& name : data.domains) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const DomainSpec& d) { return d.name == name; });
    if (it == all.end()) throw ConfigError("unknown domain '" + name + "'");
    out.push_back(*it);
  }
  return out;
}

}  // namespace rnnt
