#include "rnnt/recipes.hpp"

#include <sstream>

namespace rnnt {

namespace {

TrainConfig toy_train_config() {
  TrainConfig t;
  t.steps = 2000;
  t.batch_size = 64;
  t.learning_rate = 1e-2;
  t.eval_every = 500;
  return t;
}

CorpusRecipe toy_corpus() {
  CorpusRecipe c;
  c.speaker_std = 0.5;
  return c;
}

const DomainSpec& find_domain(const std::vector<DomainSpec>& domains, const std::string& name) {
  for (const auto& d : domains)
    if (d.name == name) return d;
  throw std::invalid_argument("unknown domain '" + name + "'");
}

EvalSet test_set(const DomainSpec& d, const FrontendConfig& fe, Index n, std::mt19937_64& rng, const std::string& name) {
  EvalSet set{name, {}};
  for (Index i = 0; i < n; ++i) set.utterances.push_back(synthesize_utterance(d, fe, rng, name + std::to_string(i)));
  return set;
}

}  // namespace

LongformRecipe default_longform_recipe() {
  LongformRecipe r;
  r.train = toy_train_config();
  r.corpus = toy_corpus();
  return r;
}

LongformRun run_longform(const LongformRecipe& recipe, StateKind kind, std::uint64_t seed) {
  const DomainSpec domain = short_domain(make_prototypes(recipe.corpus), recipe.corpus);
  std::mt19937_64 data_rng(recipe.corpus.seed * 7919 + seed);
  const EvalSet sources = test_set(domain, recipe.frontend, recipe.source_utterances, data_rng, "src");
  const Mat silence = silence_span(domain, recipe.frontend, recipe.silence_frames, data_rng);
  std::vector<EvalSet> sets;
  for (Index k : recipe.factors)
    sets.push_back({std::to_string(k) + "x", build_longform_set(sources.utterances, k, silence)});

  TrainConfig train = recipe.train;
  train.seed = seed;
  train.state.kind = kind;
  TrainerState state = TrainerState::fresh(recipe.model, train);
  std::ostringstream csv;
  write_metrics_header(csv);
  const auto rows = run_training(state, train, synthetic_source({domain}, train.sampling, recipe.frontend), sets, &csv);

  LongformRun run;
  for (size_t i = 0; i < sets.size(); ++i) run.wer[recipe.factors[i]] = rows[rows.size() - sets.size() + i].result.total;
  run.metrics_csv = csv.str();
  return run;
}

MultidomainRecipe default_multidomain_recipe() {
  MultidomainRecipe r;
  r.train = toy_train_config();
  r.train.steps = 4000;  // the mixed model needs the extra steps to match on A
  r.train.eval_every = 1000;
  r.train.sampling = SamplingKind::count_weighted;
  r.corpus = toy_corpus();
  return r;
}

MultidomainRun run_multidomain(const MultidomainRecipe& recipe, bool include_b, std::uint64_t seed) {
  const std::vector<DomainSpec> all = default_domains(recipe.corpus);
  const DomainSpec& a = find_domain(all, recipe.domain_a);
  const DomainSpec& b = find_domain(all, recipe.domain_b);
  std::mt19937_64 data_rng(recipe.corpus.seed * 7919 + seed);
  const std::vector<EvalSet> sets = {test_set(a, recipe.frontend, recipe.test_utterances, data_rng, "a"),
                                     test_set(b, recipe.frontend, recipe.test_utterances, data_rng, "b")};

  TrainConfig train = recipe.train;
  train.seed = seed;
  std::vector<DomainSpec> domains = {a};
  if (include_b) domains.push_back(b);
  TrainerState state = TrainerState::fresh(recipe.model, train);
  run_training(state, train, synthetic_source(domains, train.sampling, recipe.frontend), {});
  return {evaluate(state.model, train.state, sets[0], train.eval_decode).total,
          evaluate(state.model, train.state, sets[1], train.eval_decode).total};
}

}  // namespace rnnt
