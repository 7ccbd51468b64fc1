#pragma once

// Training loop: mini-batch assembly, initial-state strategies, summed
// per-utterance transducer loss, clipping, Adam, and periodic WER tracking.

#include "rnnt/corpus.hpp"
#include "rnnt/decoder.hpp"
#include "rnnt/eval.hpp"
#include "rnnt/longform.hpp"

#include <functional>
#include <iosfwd>
#include <random>
#include <stdexcept>

namespace rnnt {

class NumericDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Index batch_size = 8;
  long steps = 2000;
  long eval_every = 200;
  Real learning_rate = 1e-3;
  long warmup_steps = 100;  // linear ramp; 0 means constant
  Real clip_norm = 5.0;     // <= 0 disables clipping
  std::uint64_t seed = 1;
  StateStrategy state;
  SamplingKind sampling = SamplingKind::count_weighted;
  DecodeOptions eval_decode{1, 0.0, 10};  // beam 1, margin 0: greedy
  long max_consecutive_divergences = 20;

  void validate() const;
};

/// Learning rate in effect for the update that completes `step` (1-based).
Real learning_rate_at(const TrainConfig& config, long step);

struct StepResult {
  Real loss = 0;  // summed over the batch
  Index utterances = 0;
  Index label_tokens = 0;
  Real grad_norm = 0;  // before clipping
  bool diverged = false;
  Index states_passed = 0;  // rsp draws that used a pool entry
};

/// Everything a training run mutates; persisted by checkpoints.
struct TrainerState {
  Model model;
  AdamState<Real> optimizer;
  long step = 0;
  std::mt19937_64 rng;
  StatePool pool;

  /// Fresh model drawn from seed, optimizer and pool empty.
  static TrainerState fresh(const ModelConfig& config, const TrainConfig& train);
};

/// Full-batch gradient of the summed loss; parameters are not touched.
/// `finals` receives one final state per utterance when non-null.
StepResult accumulate_gradients(const Model& model, const std::vector<Utterance>& batch,
                                const std::vector<RecurrentState>& init_states, ModelParams& grads,
                                std::vector<RecurrentState>* finals = nullptr);

/// One optimizer step. Non-finite loss or gradient leaves parameters and
/// optimizer untouched and reports diverged.
StepResult train_step(TrainerState& state, const std::vector<Utterance>& batch, const TrainConfig& config);

struct BatchSource {
  std::function<std::vector<Utterance>(std::mt19937_64&, Index)> draw;
  Index corpus_size = 0;  // 0 when generated on the fly
};

/// Utterances synthesized on demand from the domain specs.
BatchSource synthetic_source(std::vector<DomainSpec> domains, SamplingKind sampling, FrontendConfig frontend);

/// Utterances drawn from a fixed corpus: a domain (or leaf) is sampled by the
/// strategy, then an utterance uniformly among those tagged with it.
BatchSource corpus_source(std::vector<DomainSpec> domains, SamplingKind sampling, std::vector<Utterance> corpus);

struct EvalSet {
  std::string name;
  std::vector<Utterance> utterances;
};

struct DecodedUtterance {
  std::string id;
  DecodeResult result;
};

std::vector<DecodedUtterance> decode_set(const Model& model, const StateStrategy& strategy, const EvalSet& set,
                                         const DecodeOptions& options);
CorpusWer score_set(const EvalSet& set, const std::vector<DecodedUtterance>& decoded);
CorpusWer evaluate(const Model& model, const StateStrategy& strategy, const EvalSet& set, const DecodeOptions& options);

struct MetricsRow {
  long step = 0;
  Real epoch = 0;
  Real train_loss = 0;  // mean per-utterance loss since the previous row
  std::string test_set;
  CorpusWer result;
};

struct TrainingHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  std::function<void(const TrainerState&)> on_checkpoint;
  long checkpoint_every = 0;
};

/// Header of metrics.csv. The file holds only deterministic quantities;
/// wall-clock timing goes to the separate timing stream.
void write_metrics_header(std::ostream& os);

/// Runs until state.step == config.steps. Evaluates every eval set when the
/// run starts at step 0, every eval_every steps, and at the final step.
std::vector<MetricsRow> run_training(TrainerState& state, const TrainConfig& config, const BatchSource& source,
                                     const std::vector<EvalSet>& eval_sets, std::ostream* metrics_csv = nullptr,
                                     std::ostream* timing_csv = nullptr, const TrainingHooks& hooks = {});

}  // namespace rnnt
