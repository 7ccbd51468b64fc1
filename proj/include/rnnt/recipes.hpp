#pragma once

// Seeded toy experiments: long-form generalization under each initial-state
// strategy, and single- versus multi-domain training.

#include "rnnt/trainer.hpp"

#include <map>
#include <string>

namespace rnnt {

struct LongformRecipe {
  ModelConfig model;
  TrainConfig train;
  CorpusRecipe corpus;
  FrontendConfig frontend;
  Index source_utterances = 200;  // short test utterances feeding every set
  Index silence_frames = 3;       // between pieces, post-frontend
  std::vector<Index> factors = {1, 5, 20};
};

LongformRecipe default_longform_recipe();

struct LongformRun {
  std::map<Index, WerBreakdown> wer;  // by concatenation factor, final step
  std::string metrics_csv;
};

/// Trains on the short domain with `kind` and scores greedy WER on the
/// concatenated test sets. The test data depends on the seed only, so runs
/// that differ in strategy see the same sets.
LongformRun run_longform(const LongformRecipe& recipe, StateKind kind, std::uint64_t seed);

struct MultidomainRecipe {
  ModelConfig model;
  TrainConfig train;
  CorpusRecipe corpus;
  FrontendConfig frontend;
  std::string domain_a = "search";
  std::string domain_b = "farfield";
  Index test_utterances = 200;
};

MultidomainRecipe default_multidomain_recipe();

struct MultidomainRun {
  WerBreakdown on_a;
  WerBreakdown on_b;
};

/// Trains on domain A alone, or on A and B with count-weighted sampling, and
/// scores both test sets.
MultidomainRun run_multidomain(const MultidomainRecipe& recipe, bool include_b, std::uint64_t seed);

}  // namespace rnnt
