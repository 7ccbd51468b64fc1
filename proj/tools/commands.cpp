#include "commands.hpp"

#include "rnnt/checkpoint.hpp"
#include "rnnt/config.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace rnnt::cli {

namespace fs = std::filesystem;

namespace {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string text_of(const TokenSequence& tokens) {
  std::string s;
  for (Token t : tokens) s += (s.empty() ? "w" : " w") + std::to_string(t);
  return s;
}

ExperimentConfig config_from(const std::string& path) { return path.empty() ? ExperimentConfig{} : load_config(path); }

bool is_nonempty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

std::vector<Utterance> read_corpus_checked(const fs::path& dir) {
  try {
    return read_corpus(dir);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

void check_compatible(const std::vector<Utterance>& utts, const ModelConfig& model, const std::string& what) {
  for (const auto& u : utts) {
    if (u.features.cols() != model.feature_dim)
      throw DataError(fmt::format("{}: {} has feature width {}, model expects {}", what, u.id, u.features.cols(),
                                  model.feature_dim));
    for (Token t : u.tokens)
      if (t < 0 || t >= model.vocab_size)
        throw DataError(fmt::format("{}: {} has token {} outside the model vocabulary of {}", what, u.id, t,
                                    model.vocab_size));
  }
}

// ---------------------------------------------------------------------------
// datagen

int datagen(const ExperimentConfig& config, const fs::path& out, std::uint64_t seed, bool force) {
  if (is_nonempty_dir(out) && !force) throw DataError(out.string() + " exists and is not empty (use --force)");
  if (force && fs::exists(out)) fs::remove_all(out);
  fs::create_directories(out);
  const std::vector<DomainSpec> domains = select_domains(config.data);
  std::mt19937_64 rng(seed);

  std::vector<Utterance> train;
  for (const auto& d : domains)
    for (Index i = 0; i < config.data.train_utterances; ++i)
      train.push_back(synthesize_utterance(d, config.data.frontend, rng, fmt::format("{}-train-{:06d}", d.name, i)));
  write_corpus(out / "train", train);

  for (const auto& d : domains) {
    std::vector<Utterance> test;
    for (Index i = 0; i < config.data.test_utterances; ++i)
      test.push_back(synthesize_utterance(d, config.data.frontend, rng, fmt::format("{}-test-{:06d}", d.name, i)));
    write_corpus(out / "test" / d.name, test);
  }

  // Long-form sets are built from fresh utterances of the first domain.
  const DomainSpec& first = domains.front();
  std::vector<Utterance> sources;
  for (Index i = 0; i < config.data.longform_sources; ++i)
    sources.push_back(synthesize_utterance(first, config.data.frontend, rng, fmt::format("lf{:06d}", i)));
  const Mat silence = silence_span(first, config.data.frontend, config.data.silence_frames, rng);
  for (Index k : config.data.longform_factors) {
    std::vector<Utterance> set = build_longform_set(sources, k, silence);
    for (size_t i = 0; i < set.size(); ++i) set[i].id = fmt::format("{}x-{:06d}", k, i);
    write_corpus(out / "longform" / (std::to_string(k) + "x"), set);
  }

  std::ofstream(out / "domains.json") << domains_to_json(domains);
  std::ofstream cfg(out / "config.ini");
  write_config(cfg, config);
  spdlog::info("datagen: {} training utterances, {} domains, {} long-form sets in {}", train.size(), domains.size(),
               config.data.longform_factors.size(), out.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// train

std::vector<EvalSet> load_eval_sets(const fs::path& data, const ModelConfig& model) {
  std::vector<EvalSet> sets;
  for (const char* group : {"test", "longform"}) {
    if (!fs::exists(data / group)) continue;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(data / group))
      if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      EvalSet set{std::string(group) + "/" + d.filename().string(), read_corpus_checked(d)};
      check_compatible(set.utterances, model, set.name);
      sets.push_back(std::move(set));
    }
  }
  return sets;
}

int train(ExperimentConfig config, const fs::path& data, const fs::path& out, const std::string& resume) {
  std::vector<Utterance> corpus = read_corpus_checked(data / "train");
  check_compatible(corpus, config.model, "train");
  if (corpus.empty()) throw DataError("training corpus is empty");
  const std::vector<EvalSet> sets = load_eval_sets(data, config.model);
  const std::vector<DomainSpec> domains = select_domains(config.data);

  TrainerState state = TrainerState::fresh(config.model, config.train);
  if (!resume.empty()) {
    state = load_checkpoint(resume);
    if (!(state.model.config == config.model)) throw ConfigError("checkpoint model config differs from --config");
    spdlog::info("resuming from {} at step {}", resume, state.step);
  }
  state.pool = [&] {
    // Capacity follows the config; entries carry over from the checkpoint.
    StatePool pool(config.train.state.pool_capacity);
    for (const auto& e : state.pool.entries()) pool.deposit(e.state, e.step);
    pool.set_rejected(state.pool.rejected());
    return pool;
  }();

  fs::create_directories(out);
  const bool append = !resume.empty() && fs::exists(out / "metrics.csv");
  std::ofstream metrics(out / "metrics.csv", append ? std::ios::app : std::ios::trunc);
  std::ofstream timing(out / "timing.csv", append ? std::ios::app : std::ios::trunc);
  if (!metrics || !timing) throw DataError("cannot write metrics in " + out.string());
  if (!append) {
    write_metrics_header(metrics);
    timing << "step,seconds\n";
  }
  {
    std::ofstream cfg(out / "config.ini");
    write_config(cfg, config);
  }

  const fs::path ckpt = out / "checkpoint.rntc";
  TrainingHooks hooks;
  hooks.checkpoint_every = config.checkpoint_every;
  hooks.on_checkpoint = [&](const TrainerState& s) { save_checkpoint(ckpt, s); };
  try {
    run_training(state, config.train, corpus_source(domains, config.train.sampling, std::move(corpus)), sets, &metrics,
                 &timing, hooks);
  } catch (const NumericDivergence& e) {
    spdlog::error("{}", e.what());
    return kDivergence;
  }
  save_checkpoint(ckpt, state);
  spdlog::info("train: step {}, checkpoint {}", state.step, ckpt.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// decode

int decode(const fs::path& checkpoint, const fs::path& manifest_dir, const DecodeOptions& options,
           const fs::path& out) {
  const TrainerState state = load_checkpoint(checkpoint);
  const Model& model = state.model;
  const std::vector<Utterance> utts = read_corpus_checked(manifest_dir);
  check_compatible(utts, model.config, manifest_dir.string());

  std::ofstream os(out);
  if (!os) throw DataError("cannot write " + out.string());
  const bool greedy = options.beam_width == 1;
  const RecurrentState zero = RecurrentState::zero(model.config);
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  Index frames = 0, peak = 0;
  for (size_t i = 0; i < utts.size(); ++i) {
    const Utterance& u = utts[i];
    const DecodeResult r = greedy ? greedy_decode(model, u.features, zero) : decode_utterance(model, u.features, zero, options);
    nlohmann::json j = {{"utterance_id", u.id},
                        {"tokens", r.tokens},
                        {"text", text_of(r.tokens)},
                        {"log_prob", r.log_prob},
                        {"frames", u.features.rows()}};
    os << j.dump() << '\n';
    frames += u.features.rows();
    peak = std::max(peak, r.stats.peak_hypotheses);
    if ((i + 1) % 50 == 0 || i + 1 == utts.size()) {
      const double secs = std::chrono::duration<double>(Clock::now() - start).count();
      spdlog::info("decode: {}/{} utterances, {:.0f} frames/s, peak hypotheses {}", i + 1, utts.size(),
                   secs > 0 ? static_cast<double>(frames) / secs : 0.0, peak);
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

int eval(const fs::path& hyps_path, const fs::path& manifest_dir, const std::string& name, const fs::path& out) {
  const std::vector<Utterance> utts = read_corpus_checked(manifest_dir);
  std::ifstream in(hyps_path);
  if (!in) throw DataError("cannot read " + hyps_path.string());
  std::map<std::string, TokenSequence> hyps;
  std::string line;
  for (long n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      hyps[j.at("utterance_id").get<std::string>()] = j.at("tokens").get<TokenSequence>();
    } catch (const std::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", hyps_path.string(), n, e.what()));
    }
  }
  std::vector<RefHyp> pairs;
  std::vector<std::string> missing;
  for (const auto& u : utts) {
    const auto it = hyps.find(u.id);
    if (it == hyps.end())
      missing.push_back(u.id);
    else
      pairs.emplace_back(u.tokens, it->second);
  }
  if (!missing.empty()) {
    for (const auto& id : missing) spdlog::error("eval: no hypothesis for {}", id);
    return kDataError;
  }
  const CorpusWer result = corpus_wer(pairs);
  std::ostringstream csv;
  write_wer_csv_header(csv);
  write_wer_csv_rows(csv, name, result);
  if (out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream(out) << csv.str();
  }
  std::cerr << fmt::format("{:<20} {:>8}  {}\n{:<20} {:>8}  {}\n", "test set", "utts", "WER (D / I / S)", name,
                           result.n_utts, format_wer(result.total));
  return kOk;
}

// ---------------------------------------------------------------------------
// inspect

int inspect(const fs::path& checkpoint) {
  TrainerState state = load_checkpoint(checkpoint);
  const ModelConfig& c = state.model.config;
  std::cout << fmt::format("checkpoint {} (format {})\n", checkpoint.string(), kCheckpointVersion)
            << fmt::format("step {}  optimizer step {}  lr {}\n", state.step, state.optimizer.step,
                           state.optimizer.learning_rate)
            << fmt::format("state pool {}/{} entries\n", state.pool.size(), state.pool.capacity())
            << fmt::format("vocab {}  features {}  parameters {}\n", c.vocab_size, c.feature_dim,
                           state.model.params.parameter_count());
  for (const auto& v : state.model.params.views()) {
    const Eigen::Map<const Vec> values(v.values.data(), static_cast<Index>(v.values.size()));
    std::cout << fmt::format("  {:<32} {:>4} x {:<4} norm {:.4f}\n", v.name, v.rows, v.cols, values.norm());
  }
  return kOk;
}

std::string defaults_help() {
  std::ostringstream os;
  os << "\nConfiguration keys and defaults (--config file.ini):\n\n";
  write_config(os, ExperimentConfig{});
  return os.str();
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Streaming RNN transducer toolkit"};
  app.require_subcommand(1);
  app.footer(defaults_help());
  std::string config_path;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("datagen", "Write train, test and long-form corpora");
  std::string gen_out;
  bool force = false;
  gen->add_option("--config", config_path, "experiment config (INI)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", seed, "corpus seed (default: data.seed)");
  gen->add_flag("--force", force, "replace a non-empty output directory");

  auto* tr = app.add_subcommand("train", "Train a model; writes metrics.csv, timing.csv and checkpoint.rntc");
  std::string data_dir, train_out, resume, strategy, sampling;
  std::optional<long> steps;
  tr->add_option("--config", config_path, "experiment config (INI)");
  tr->add_option("--data", data_dir, "datagen output directory")->required();
  tr->add_option("--out", train_out, "run directory")->required();
  tr->add_option("--seed", seed, "training seed (default: train.seed)");
  tr->add_option("--steps", steps, "override train.steps");
  tr->add_option("--state-strategy", strategy, "zero, rss, rss_encoder_only or rsp");
  tr->add_option("--sampling", sampling, "uniform-domain, uniform-subdomain or count-weighted");
  tr->add_option("--resume", resume, "checkpoint to continue from");

  auto* dec = app.add_subcommand("decode", "Decode a manifest to JSON-lines hypotheses");
  std::string ckpt, manifest, dec_out;
  DecodeOptions options;
  dec->add_option("--config", config_path, "experiment config; [decode] supplies defaults");
  dec->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  dec->add_option("--manifest", manifest, "corpus directory")->required();
  dec->add_option("--out", dec_out, "hypotheses file")->required();
  auto* beam_opt = dec->add_option("--beam", options.beam_width, "beam width; 1 decodes greedily");
  auto* margin_opt = dec->add_option("--margin", options.adaptive_margin, "adaptive pruning margin");

  auto* ev = app.add_subcommand("eval", "Score hypotheses against a manifest");
  std::string hyps, ev_manifest, ev_out, ev_name = "test";
  ev->add_option("--hyps", hyps, "hypotheses file from decode")->required();
  ev->add_option("--manifest", ev_manifest, "corpus directory")->required();
  ev->add_option("--name", ev_name, "test set name in the report");
  ev->add_option("--out", ev_out, "CSV report (default stdout)");

  auto* insp = app.add_subcommand("inspect", "Summarize a checkpoint");
  std::string insp_ckpt;
  insp->add_option("checkpoint", insp_ckpt, "checkpoint file")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) {
      ExperimentConfig config = config_from(config_path);
      if (seed) config.data.recipe.seed = *seed;
      return datagen(config, gen_out, config.data.recipe.seed, force);
    }
    if (*tr) {
      ExperimentConfig config = config_from(config_path);
      if (seed) config.train.seed = *seed;
      if (steps) config.train.steps = *steps;
      if (!strategy.empty()) config.train.state.kind = state_kind_from_string(strategy);
      if (!sampling.empty()) {
        std::replace(sampling.begin(), sampling.end(), '-', '_');
        config.train.sampling = sampling_kind_from_string(sampling);
      }
      config.validate();
      return train(config, data_dir, train_out, resume);
    }
    if (*dec) {
      const ExperimentConfig config = config_from(config_path);
      DecodeOptions opts = config.decode;
      if (*beam_opt) opts.beam_width = options.beam_width;
      if (*margin_opt) opts.adaptive_margin = options.adaptive_margin;
      if (opts.beam_width < 1) throw ConfigError("--beam must be positive");
      return decode(ckpt, manifest, opts, dec_out);
    }
    if (*ev) return eval(hyps, ev_manifest, ev_name, ev_out);
    if (*insp) return inspect(insp_ckpt);
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    spdlog::error("config: {}", e.what());
    return kConfigError;
  } catch (const NumericDivergence& e) {
    spdlog::error("{}", e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  return kOk;
}

}  // namespace rnnt::cli
