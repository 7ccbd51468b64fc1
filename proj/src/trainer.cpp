#include "rnnt/trainer.hpp"

#include "rnnt/loss.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <limits>
#include <map>
#include <ostream>

namespace rnnt {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (!(learning_rate >= 0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (warmup_steps < 0) throw std::invalid_argument("warmup_steps must be >= 0");
  if (state.pass_probability < 0 || state.pass_probability > 1)
    throw std::invalid_argument("rsp_pass_probability must be in [0, 1]");
  if (state.pool_capacity < 1) throw std::invalid_argument("rsp_pool_capacity must be >= 1");
  if (eval_decode.beam_width < 1) throw std::invalid_argument("beam must be >= 1");
  if (!(eval_decode.adaptive_margin >= 0)) throw std::invalid_argument("margin must be >= 0");
}

Real learning_rate_at(const TrainConfig& config, long step) {
  if (config.warmup_steps <= 0 || step >= config.warmup_steps) return config.learning_rate;
  return config.learning_rate * static_cast<Real>(step) / static_cast<Real>(config.warmup_steps);
}

TrainerState TrainerState::fresh(const ModelConfig& config, const TrainConfig& train) {
  config.validate();
  std::mt19937_64 init_rng(train.seed);
  TrainerState s{Model{config, ModelParams::random(config, init_rng)}, AdamState<Real>{}, 0,
                 std::mt19937_64(train.seed ^ 0x9e3779b97f4a7c15ULL), StatePool(train.state.pool_capacity)};
  s.optimizer.learning_rate = train.learning_rate;
  return s;
}

namespace {

bool all_finite(const std::vector<ParamView<Real>>& views) {
  for (const auto& v : views)
    for (Real x : v.values)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

StepResult accumulate_gradients(const Model& model, const std::vector<Utterance>& batch,
                                const std::vector<RecurrentState>& init_states, ModelParams& grads,
                                std::vector<RecurrentState>* finals) {
  require_shape(batch.size() == init_states.size(), "accumulate_gradients: one initial state per utterance");
  const ModelConfig& cfg = model.config;
  StepResult r;
  for (size_t i = 0; i < batch.size(); ++i) {
    const Utterance& u = batch[i];
    ForwardCache cache;
    ForwardResult fwd = forward_lattice(cfg, model.params, u.features, u.tokens, init_states[i], &cache);
    r.utterances += 1;
    r.label_tokens += static_cast<Index>(u.tokens.size());
    if (!fwd.lattice.logits.allFinite()) {
      r.loss = std::numeric_limits<Real>::infinity();
      r.diverged = true;
      continue;
    }
    const LatticeDP dp = rnnt_forward(fwd.lattice, u.tokens, cfg.blank_id());
    const Real loss = dp.loss();
    r.loss += loss;
    if (!std::isfinite(loss)) {
      r.diverged = true;
      continue;
    }
    const Mat g = rnnt_grad_logits(fwd.lattice, u.tokens, cfg.blank_id(), dp);
    backward_lattice(cfg, model.params, cache, g, grads);
    if (finals) finals->push_back(std::move(fwd.final_state));
  }
  return r;
}

StepResult train_step(TrainerState& state, const std::vector<Utterance>& batch, const TrainConfig& config) {
  if (batch.empty()) throw ContractViolation("train_step: empty batch");
  const ModelConfig& cfg = state.model.config;
  std::vector<RecurrentState> inits;
  Index passed = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    InitialState init = initial_state(config.state, cfg, state.pool, state.rng);
    passed += init.passed ? 1 : 0;
    inits.push_back(std::move(init.state));
  }

  ModelParams grads = ModelParams::zeros(cfg);
  std::vector<RecurrentState> finals;
  StepResult r = accumulate_gradients(state.model, batch, inits, grads, &finals);
  r.states_passed = passed;
  const long next_step = state.step + 1;
  auto grad_views = grads.views();
  if (r.diverged || !all_finite(grad_views)) {
    r.diverged = true;
    spdlog::warn("step {}: non-finite loss or gradient, update skipped", next_step);
    state.step = next_step;
    return r;
  }
  r.grad_norm = clip_global_norm(grad_views, config.clip_norm);
  state.optimizer.learning_rate = learning_rate_at(config, next_step);
  adam_step(state.model.params.views(), grad_views, state.optimizer);
  state.step = next_step;
  if (config.state.kind == StateKind::rsp) deposit_final_states(state.pool, finals, next_step);
  return r;
}

BatchSource synthetic_source(std::vector<DomainSpec> domains, SamplingKind sampling, FrontendConfig frontend) {
  for (const auto& d : domains) d.validate();
  return {[domains = std::move(domains), sampling, frontend](std::mt19937_64& rng, Index n) {
            return make_minibatch(sampling, domains, n, frontend, rng);
          },
          0};
}

BatchSource corpus_source(std::vector<DomainSpec> domains, SamplingKind sampling, std::vector<Utterance> corpus) {
  if (corpus.empty()) throw ContractViolation("corpus_source: empty corpus");
  // Index utterances by every domain name that covers them (leaf and ancestors).
  std::map<std::string, std::vector<size_t>> by_name;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const std::string& name = corpus[i].domain;
    for (size_t pos = name.find('/'); pos != std::string::npos; pos = name.find('/', pos + 1))
      by_name[name.substr(0, pos)].push_back(i);
    by_name[name].push_back(i);
  }
  // Drop domains without data so sampling never lands on an empty pool.
  std::erase_if(domains, [&](const DomainSpec& d) { return !by_name.count(d.name); });
  for (auto& d : domains)
    std::erase_if(d.subdomains, [&](const DomainSpec& s) { return !by_name.count(s.name); });
  if (domains.empty()) throw ContractViolation("corpus_source: no configured domain has utterances");
  const Index size = static_cast<Index>(corpus.size());
  return {[domains = std::move(domains), sampling, corpus = std::move(corpus), by_name = std::move(by_name)](
              std::mt19937_64& rng, Index n) {
            std::vector<Utterance> batch;
            for (Index i = 0; i < n; ++i) {
              const DomainSpec& d = sample_domain(sampling, domains, rng);
              const auto& pool = by_name.at(d.name);
              std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
              batch.push_back(corpus[pool[pick(rng)]]);
            }
            return batch;
          },
          size};
}

std::vector<DecodedUtterance> decode_set(const Model& model, const StateStrategy& strategy, const EvalSet& set,
                                         const DecodeOptions& options) {
  std::vector<DecodedUtterance> out;
  const RecurrentState init = inference_state(strategy, model.config);
  const bool greedy = options.beam_width == 1 && options.adaptive_margin == 0;
  for (const auto& u : set.utterances) {
    out.push_back({u.id, greedy ? greedy_decode(model, u.features, init, options.expansion_cap)
                                : decode_utterance(model, u.features, init, options)});
  }
  return out;
}

CorpusWer score_set(const EvalSet& set, const std::vector<DecodedUtterance>& decoded) {
  require_shape(set.utterances.size() == decoded.size(), "score_set: one decode per utterance");
  std::vector<RefHyp> pairs;
  for (size_t i = 0; i < decoded.size(); ++i) pairs.emplace_back(set.utterances[i].tokens, decoded[i].result.tokens);
  return corpus_wer(pairs);
}

CorpusWer evaluate(const Model& model, const StateStrategy& strategy, const EvalSet& set,
                   const DecodeOptions& options) {
  return score_set(set, decode_set(model, strategy, set, options));
}

void write_metrics_header(std::ostream& os) {
  os << "step,epoch,train_loss,test_set,n_utts,ref_tokens,wer,del_rate,ins_rate,sub_rate\n";
}

namespace {

void write_metrics_row(std::ostream& os, const MetricsRow& row) {
  const WerBreakdown& w = row.result.total;
  os << fmt::format("{},{:.4f},{:.6f},{},{},{},", row.step, row.epoch, row.train_loss, row.test_set,
                    row.result.n_utts, w.ref_len);
  if (w.ref_len == 0) {
    os << "nan,nan,nan,nan\n";
  } else {
    os << fmt::format("{:.6f},{:.6f},{:.6f},{:.6f}\n", w.wer(), w.del_rate(), w.ins_rate(), w.sub_rate());
  }
  os.flush();
}

}  // namespace

std::vector<MetricsRow> run_training(TrainerState& state, const TrainConfig& config, const BatchSource& source,
                                     const std::vector<EvalSet>& eval_sets, std::ostream* metrics_csv,
                                     std::ostream* timing_csv, const TrainingHooks& hooks) {
  config.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  std::vector<MetricsRow> history;
  Real loss_sum = 0;
  Index loss_count = 0;
  long consecutive_divergences = 0;

  auto run_eval = [&] {
    const Real mean_loss = loss_count ? loss_sum / static_cast<Real>(loss_count) : 0.0;
    const Real epoch = source.corpus_size
                           ? static_cast<Real>(state.step * config.batch_size) / static_cast<Real>(source.corpus_size)
                           : 0.0;
    for (const auto& set : eval_sets) {
      MetricsRow row{state.step, epoch, mean_loss, set.name, evaluate(state.model, config.state, set, config.eval_decode)};
      if (metrics_csv) write_metrics_row(*metrics_csv, row);
      if (hooks.on_metrics) hooks.on_metrics(row);
      spdlog::info("step {} {}: wer {}", row.step, row.test_set, format_wer(row.result.total));
      history.push_back(std::move(row));
    }
    if (timing_csv) {
      const std::chrono::duration<double> elapsed = Clock::now() - start;
      *timing_csv << fmt::format("{},{:.3f}\n", state.step, elapsed.count());
      timing_csv->flush();
    }
    loss_sum = 0;
    loss_count = 0;
  };

  if (state.step == 0) run_eval();
  while (state.step < config.steps) {
    const auto batch = source.draw(state.rng, config.batch_size);
    const StepResult r = train_step(state, batch, config);
    if (r.diverged) {
      if (++consecutive_divergences >= config.max_consecutive_divergences)
        throw NumericDivergence(fmt::format("training diverged: {} consecutive non-finite steps ending at step {}",
                                            consecutive_divergences, state.step));
    } else {
      consecutive_divergences = 0;
      loss_sum += r.loss;
      loss_count += r.utterances;
    }
    if (state.step % config.eval_every == 0 || state.step == config.steps) run_eval();
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && state.step % hooks.checkpoint_every == 0)
      hooks.on_checkpoint(state);
  }
  return history;
}

}  // namespace rnnt
