#pragma once

// Experiment configuration: an INI file with [model], [train], [data] and
// [decode] sections. Every key has a default; unknown keys are rejected.

#include "rnnt/trainer.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace rnnt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  CorpusRecipe recipe;
  FrontendConfig frontend;
  // Names from the default recipe (search, farfield, telephony, youtube).
  std::vector<std::string> domains = {"search"};
  Index train_utterances = 2000;  // per domain
  Index test_utterances = 200;    // per domain
  std::vector<Index> longform_factors = {1, 5, 20};
  Index longform_sources = 200;  // short test utterances feeding the long-form sets
  Index silence_frames = 3;      // between concatenated pieces, post-frontend
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  DecodeOptions decode;
  long checkpoint_every = 0;

  /// Cross-section consistency (feature width, vocabulary); throws ConfigError.
  void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Every key with its current value and a one-line description, as INI.
void write_config(std::ostream& os, const ExperimentConfig& config);

/// Default-recipe domains selected by name, in the listed order.
std::vector<DomainSpec> select_domains(const DataConfig& data);

}  // namespace rnnt
