#include "rnnt/corpus.hpp"

#include "rnnt/binary_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>

namespace rnnt {

void DomainSpec::validate() const {
  auto fail = [&](const std::string& what) { throw std::invalid_argument("domain '" + name + "': " + what); };
  if (prototypes.rows() < 2 || prototypes.cols() < 1) fail("need at least two token prototypes");
  if (gain.size() != raw_dim() || bias.size() != raw_dim() || silence.size() != raw_dim())
    fail("gain/bias/silence must have raw_dim entries");
  if (min_token_frames < 1 || max_token_frames < min_token_frames) fail("token durations must be >= 1 frame");
  if (min_tokens < 0 || max_tokens < min_tokens) fail("bad token count range");
  if (noise_std < 0) fail("noise_std must be >= 0");
  if (speaker_std < 0) fail("speaker_std must be >= 0");
  if (silence_probability < 0 || silence_probability > 1) fail("silence_probability must be in [0, 1]");
  if (min_silence_frames < 0 || max_silence_frames < min_silence_frames || edge_silence_frames < 0)
    fail("bad silence duration range");
  if (weight_hours < 0) fail("weight_hours must be >= 0");
  for (const auto& s : subdomains) s.validate();
}

std::string to_string(SamplingKind kind) {
  switch (kind) {
    case SamplingKind::uniform_domain: return "uniform-domain";
    case SamplingKind::uniform_subdomain: return "uniform-subdomain";
    case SamplingKind::count_weighted: return "count-weighted";
  }
  return "?";
}

SamplingKind sampling_kind_from_string(const std::string& s) {
  if (s == "uniform-domain" || s == "uniform_domain") return SamplingKind::uniform_domain;
  if (s == "uniform-subdomain" || s == "uniform_subdomain") return SamplingKind::uniform_subdomain;
  if (s == "count-weighted" || s == "count_weighted") return SamplingKind::count_weighted;
  throw std::invalid_argument("unknown sampling strategy '" + s + "'");
}

Mat frontend_stack(const Mat& raw_frames, Index stack, Index hop) {
  if (stack < 1 || hop < 1) throw std::invalid_argument("frontend_stack: stack and hop must be >= 1");
  const Index t = raw_frames.rows();
  const Index d = raw_frames.cols();
  const Index out_rows = (t + hop - 1) / hop;
  Mat out = Mat::Zero(out_rows, stack * d);
  for (Index i = 0; i < out_rows; ++i)
    for (Index k = 0; k < stack && i * hop + k < t; ++k) out.block(i, k * d, 1, d) = raw_frames.row(i * hop + k);
  return out;
}

namespace {

Index uniform_index(Index lo, Index hi, std::mt19937_64& rng) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

void emit_frames(std::vector<Vec>& frames, const Vec& mean, const DomainSpec& d, const Vec& speaker, Index count,
                 std::mt19937_64& rng) {
  std::normal_distribution<Real> noise(0.0, 1.0);
  const Vec channel = d.gain.cwiseProduct(mean) + d.bias + speaker;
  for (Index i = 0; i < count; ++i) {
    Vec f = channel;
    if (d.noise_std > 0)
      for (Index k = 0; k < f.size(); ++k) f(k) += d.noise_std * noise(rng);
    frames.push_back(std::move(f));
  }
}

Mat to_matrix(const std::vector<Vec>& rows, Index width) {
  Mat m(static_cast<Index>(rows.size()), width);
  for (size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i].transpose();
  return m;
}

size_t sample_index(const std::vector<Real>& probs, std::mt19937_64& rng) {
  return std::discrete_distribution<size_t>(probs.begin(), probs.end())(rng);
}

}  // namespace

const DomainSpec& pick_leaf(const DomainSpec& domain, std::mt19937_64& rng) {
  if (domain.subdomains.empty()) return domain;
  std::vector<Real> w;
  for (const auto& s : domain.subdomains) w.push_back(s.weight_hours);
  if (std::accumulate(w.begin(), w.end(), 0.0) <= 0) w.assign(w.size(), 1.0);
  return pick_leaf(domain.subdomains[sample_index(w, rng)], rng);
}

RawUtterance synthesize_raw(const DomainSpec& domain, std::mt19937_64& rng) {
  const DomainSpec& d = pick_leaf(domain, rng);
  RawUtterance out;
  std::vector<Vec> frames;
  std::bernoulli_distribution pause(d.silence_probability);
  Vec speaker = Vec::Zero(d.raw_dim());
  if (d.speaker_std > 0) {
    std::normal_distribution<Real> n(0.0, d.speaker_std);
    for (Index k = 0; k < speaker.size(); ++k) speaker(k) = n(rng);
  }
  const Index n = uniform_index(d.min_tokens, d.max_tokens, rng);
  emit_frames(frames, d.silence, d, speaker, d.edge_silence_frames, rng);
  for (Index i = 0; i < n; ++i) {
    // Immediate repeats would be indistinguishable from one long token.
    Token tok;
    do {
      tok = static_cast<Token>(uniform_index(0, d.vocab_size() - 1, rng));
    } while (!out.tokens.empty() && tok == out.tokens.back());
    out.tokens.push_back(tok);
    emit_frames(frames, d.prototypes.row(tok).transpose(), d, speaker,
                uniform_index(d.min_token_frames, d.max_token_frames, rng), rng);
    if (i + 1 < n && pause(rng))
      emit_frames(frames, d.silence, d, speaker, uniform_index(d.min_silence_frames, d.max_silence_frames, rng), rng);
  }
  emit_frames(frames, d.silence, d, speaker, d.edge_silence_frames, rng);
  out.frames = to_matrix(frames, d.raw_dim());
  return out;
}

Utterance synthesize_utterance(const DomainSpec& domain, const FrontendConfig& frontend, std::mt19937_64& rng,
                               std::string id) {
  const DomainSpec& leaf = pick_leaf(domain, rng);
  RawUtterance raw = synthesize_raw(leaf, rng);
  Utterance u;
  u.id = std::move(id);
  u.domain = leaf.name;
  u.raw_frame_count = raw.frames.rows();
  u.features = frontend_stack(raw.frames, frontend.stack, frontend.hop);
  u.tokens = std::move(raw.tokens);
  return u;
}

std::vector<const DomainSpec*> leaf_domains(const std::vector<DomainSpec>& domains) {
  std::vector<const DomainSpec*> out;
  for (const auto& d : domains) {
    if (d.subdomains.empty()) {
      out.push_back(&d);
    } else {
      for (const auto* s : leaf_domains(d.subdomains)) out.push_back(s);
    }
  }
  return out;
}

std::vector<Real> sampling_distribution(SamplingKind kind, const std::vector<DomainSpec>& domains) {
  if (domains.empty()) throw ContractViolation("sampling_distribution: no domains");
  std::vector<Real> p;
  switch (kind) {
    case SamplingKind::uniform_domain:
      p.assign(domains.size(), 1.0 / static_cast<Real>(domains.size()));
      break;
    case SamplingKind::uniform_subdomain: {
      const auto leaves = leaf_domains(domains);
      p.assign(leaves.size(), 1.0 / static_cast<Real>(leaves.size()));
      break;
    }
    case SamplingKind::count_weighted: {
      Real total = 0;
      for (const auto& d : domains) total += d.weight_hours;
      if (!(total > 0)) throw ContractViolation("sampling_distribution: all domain weights are zero");
      for (const auto& d : domains) p.push_back(d.weight_hours / total);
      break;
    }
  }
  return p;
}

const DomainSpec& sample_domain(SamplingKind kind, const std::vector<DomainSpec>& domains, std::mt19937_64& rng) {
  const auto p = sampling_distribution(kind, domains);
  const size_t i = sample_index(p, rng);
  if (kind == SamplingKind::uniform_subdomain) return *leaf_domains(domains)[i];
  return domains[i];
}

std::vector<Utterance> make_minibatch(SamplingKind kind, const std::vector<DomainSpec>& domains, Index batch_size,
                                      const FrontendConfig& frontend, std::mt19937_64& rng) {
  if (batch_size < 1) throw ContractViolation("make_minibatch: batch_size must be >= 1");
  std::vector<Utterance> batch;
  for (Index i = 0; i < batch_size; ++i) {
    const DomainSpec& d = sample_domain(kind, domains, rng);
    batch.push_back(synthesize_utterance(d, frontend, rng, "mb-" + std::to_string(i)));
  }
  return batch;
}

std::vector<Utterance> build_longform_set(const std::vector<Utterance>& sources, Index concat_count,
                                          const Mat& silence) {
  if (concat_count < 1) throw ContractViolation("build_longform_set: concat_count must be >= 1");
  std::vector<Utterance> out;
  const auto groups = static_cast<Index>(sources.size()) / concat_count;
  for (Index g = 0; g < groups; ++g) {
    Utterance u;
    Index rows = 0;
    for (Index k = 0; k < concat_count; ++k) rows += sources[static_cast<size_t>(g * concat_count + k)].features.rows();
    rows += (concat_count - 1) * silence.rows();
    const Index width = sources[static_cast<size_t>(g * concat_count)].features.cols();
    require_shape(silence.rows() == 0 || silence.cols() == width, "build_longform_set: silence width mismatch");
    u.features.resize(rows, width);
    Index at = 0;
    for (Index k = 0; k < concat_count; ++k) {
      const Utterance& s = sources[static_cast<size_t>(g * concat_count + k)];
      require_shape(s.features.cols() == width, "build_longform_set: feature width mismatch");
      if (k > 0) {
        u.features.middleRows(at, silence.rows()) = silence;
        at += silence.rows();
        u.id += "+";
      }
      u.features.middleRows(at, s.features.rows()) = s.features;
      at += s.features.rows();
      u.tokens.insert(u.tokens.end(), s.tokens.begin(), s.tokens.end());
      u.raw_frame_count += s.raw_frame_count;
      u.id += s.id;
    }
    u.domain = sources[static_cast<size_t>(g * concat_count)].domain;
    out.push_back(std::move(u));
  }
  return out;
}

Mat silence_span(const DomainSpec& domain, const FrontendConfig& frontend, Index frames, std::mt19937_64& rng) {
  if (frames <= 0) return Mat(0, domain.raw_dim() * frontend.stack);
  const DomainSpec& d = pick_leaf(domain, rng);
  std::vector<Vec> raw;
  emit_frames(raw, d.silence, d, Vec::Zero(d.raw_dim()), (frames - 1) * frontend.hop + frontend.stack, rng);
  Mat stacked = frontend_stack(to_matrix(raw, d.raw_dim()), frontend.stack, frontend.hop);
  return stacked.topRows(frames);
}

// ---------------------------------------------------------------------------

PrototypeTable make_prototypes(const CorpusRecipe& recipe) {
  std::mt19937_64 rng(recipe.seed);
  std::normal_distribution<Real> n(0.0, 1.0);
  PrototypeTable t;
  t.tokens = Mat(recipe.vocab_size, recipe.raw_dim);
  for (Index i = 0; i < t.tokens.size(); ++i) t.tokens.data()[i] = n(rng);
  t.silence = Vec::Zero(recipe.raw_dim);
  return t;
}

namespace {

DomainSpec base_domain(const PrototypeTable& p, const CorpusRecipe& r, std::string name) {
  DomainSpec d;
  d.name = std::move(name);
  d.prototypes = p.tokens;
  d.silence = p.silence;
  d.gain = Vec::Ones(r.raw_dim);
  d.bias = Vec::Zero(r.raw_dim);
  d.noise_std = r.noise_std;
  d.speaker_std = r.speaker_std;
  return d;
}

Vec seeded_shift(Index dim, std::uint64_t seed, Real scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> n(0.0, scale);
  Vec v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = n(rng);
  return v;
}

}  // namespace

DomainSpec short_domain(const PrototypeTable& protos, const CorpusRecipe& recipe, const std::string& name) {
  DomainSpec d = base_domain(protos, recipe, name);
  d.min_tokens = 2;
  d.max_tokens = 8;
  d.weight_hours = 56;
  return d;
}

std::vector<DomainSpec> default_domains(const CorpusRecipe& recipe) {
  const PrototypeTable protos = make_prototypes(recipe);
  std::vector<DomainSpec> out;
  out.push_back(short_domain(protos, recipe, "search"));

  DomainSpec farfield = base_domain(protos, recipe, "farfield");
  farfield.gain = Vec::Constant(recipe.raw_dim, 0.5);
  farfield.bias = seeded_shift(recipe.raw_dim, recipe.seed + 101, 1.0);
  farfield.noise_std = recipe.noise_std;
  farfield.min_tokens = 1;
  farfield.max_tokens = 6;
  farfield.weight_hours = 38;
  out.push_back(farfield);

  DomainSpec telephony = base_domain(protos, recipe, "telephony");
  telephony.gain = Vec::Constant(recipe.raw_dim, 0.7);
  telephony.bias = seeded_shift(recipe.raw_dim, recipe.seed + 202, 1.0);
  telephony.noise_std = 1.5 * recipe.noise_std;
  telephony.min_tokens = 2;
  telephony.max_tokens = 10;
  telephony.weight_hours = 4;
  out.push_back(telephony);

  DomainSpec youtube = base_domain(protos, recipe, "youtube");
  youtube.min_tokens = 12;
  youtube.max_tokens = 24;
  youtube.silence_probability = 0.35;
  youtube.weight_hours = 190;
  const char* subs[] = {"news", "education", "gaming"};
  const Real sub_hours[] = {80, 70, 40};
  const DomainSpec leaf_template = youtube;
  for (int i = 0; i < 3; ++i) {
    DomainSpec s = leaf_template;
    s.name = std::string("youtube/") + subs[i];
    s.bias = seeded_shift(recipe.raw_dim, recipe.seed + 303 + static_cast<std::uint64_t>(i), 0.4);
    s.weight_hours = sub_hours[i];
    youtube.subdomains.push_back(std::move(s));
  }
  out.push_back(youtube);
  return out;
}

// ---------------------------------------------------------------------------

void write_feature_file(const std::filesystem::path& path, const Mat& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  binary::write_i32(os, static_cast<std::int32_t>(features.rows()));
  binary::write_i32(os, static_cast<std::int32_t>(features.cols()));
  for (Index i = 0; i < features.size(); ++i) binary::write_f64(os, features.data()[i]);
}

Mat read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  const auto rows = binary::read_i32(is);
  const auto cols = binary::read_i32(is);
  if (rows < 0 || cols < 0) throw binary::FormatError("negative dims in " + path.string());
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = binary::read_f64(is);
  return m;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<Utterance>& utterances) {
  std::filesystem::create_directories(dir / "feats");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& u : utterances) {
    const std::string rel = "feats/" + u.id + ".bin";
    write_feature_file(dir / rel, u.features);
    nlohmann::json j = {{"id", u.id},
                        {"domain", u.domain},
                        {"token_ids", u.tokens},
                        {"feature_file", rel},
                        {"frame_count", u.features.rows()},
                        {"raw_frame_count", u.raw_frame_count}};
    manifest << j.dump() << '\n';
  }
}

std::vector<Utterance> read_corpus(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("cannot read manifest in " + dir.string());
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.domain = j.at("domain").get<std::string>();
    u.tokens = j.at("token_ids").get<TokenSequence>();
    u.features = read_feature_file(dir / j.at("feature_file").get<std::string>());
    u.raw_frame_count = j.value("raw_frame_count", Index{0});
    if (u.features.rows() != j.at("frame_count").get<Index>())
      throw binary::FormatError("frame_count mismatch for " + u.id);
    out.push_back(std::move(u));
  }
  return out;
}

namespace {

nlohmann::json vec_json(const Vec& v) { return std::vector<Real>(v.data(), v.data() + v.size()); }

Vec json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<Real>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

nlohmann::json domain_json(const DomainSpec& d) {
  nlohmann::json protos = nlohmann::json::array();
  for (Index i = 0; i < d.prototypes.rows(); ++i) protos.push_back(vec_json(d.prototypes.row(i).transpose()));
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : d.subdomains) subs.push_back(domain_json(s));
  return {{"name", d.name},
          {"prototypes", protos},
          {"min_token_frames", d.min_token_frames},
          {"max_token_frames", d.max_token_frames},
          {"gain", vec_json(d.gain)},
          {"bias", vec_json(d.bias)},
          {"noise_std", d.noise_std},
          {"speaker_std", d.speaker_std},
          {"min_tokens", d.min_tokens},
          {"max_tokens", d.max_tokens},
          {"silence", vec_json(d.silence)},
          {"silence_probability", d.silence_probability},
          {"min_silence_frames", d.min_silence_frames},
          {"max_silence_frames", d.max_silence_frames},
          {"edge_silence_frames", d.edge_silence_frames},
          {"subdomains", subs},
          {"weight_hours", d.weight_hours}};
}

DomainSpec json_domain(const nlohmann::json& j) {
  DomainSpec d;
  d.name = j.at("name").get<std::string>();
  const auto& protos = j.at("prototypes");
  if (!protos.empty()) {
    d.prototypes.resize(static_cast<Index>(protos.size()), static_cast<Index>(protos[0].size()));
    for (size_t i = 0; i < protos.size(); ++i) d.prototypes.row(static_cast<Index>(i)) = json_vec(protos[i]).transpose();
  }
  d.min_token_frames = j.at("min_token_frames");
  d.max_token_frames = j.at("max_token_frames");
  d.gain = json_vec(j.at("gain"));
  d.bias = json_vec(j.at("bias"));
  d.noise_std = j.at("noise_std");
  d.speaker_std = j.value("speaker_std", 0.0);
  d.min_tokens = j.at("min_tokens");
  d.max_tokens = j.at("max_tokens");
  d.silence = json_vec(j.at("silence"));
  d.silence_probability = j.at("silence_probability");
  d.min_silence_frames = j.at("min_silence_frames");
  d.max_silence_frames = j.at("max_silence_frames");
  d.edge_silence_frames = j.at("edge_silence_frames");
  for (const auto& s : j.at("subdomains")) d.subdomains.push_back(json_domain(s));
  d.weight_hours = j.at("weight_hours");
  return d;
}

}  // namespace

std::string domains_to_json(const std::vector<DomainSpec>& domains) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : domains) arr.push_back(domain_json(d));
  return arr.dump(1);
}

std::vector<DomainSpec> domains_from_json(const std::string& text) {
  std::vector<DomainSpec> out;
  for (const auto& j : nlohmann::json::parse(text)) out.push_back(json_domain(j));
  for (const auto& d : out) d.validate();
  return out;
}

}  // namespace rnnt
