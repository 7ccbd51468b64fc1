#pragma once

// Synthetic multidomain speech stand-in: shared token prototypes seen through
// per-domain affine channels with Gaussian noise, a stack-and-subsample
// frontend, domain sampling strategies and long-form concatenation.

#include "rnnt/model.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace rnnt {

struct DomainSpec {
  std::string name;
  Mat prototypes;  // vocab x raw_dim mean frame per token
  Index min_token_frames = 6;
  Index max_token_frames = 12;
  Vec gain;  // raw_dim
  Vec bias;  // raw_dim
  Real noise_std = 0.3;
  // Per-utterance offset drawn from N(0, speaker_std^2 I) and added to every
  // frame, silence included: the speaker and session variation in a domain.
  Real speaker_std = 0.0;
  Index min_tokens = 2;
  Index max_tokens = 8;
  Vec silence;  // raw_dim prototype
  Real silence_probability = 0.2;
  Index min_silence_frames = 3;
  Index max_silence_frames = 8;
  Index edge_silence_frames = 3;  // leading and trailing
  std::vector<DomainSpec> subdomains;
  Real weight_hours = 1.0;

  Index raw_dim() const { return prototypes.cols(); }
  Index vocab_size() const { return prototypes.rows(); }
  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

struct FrontendConfig {
  Index stack = 4;
  Index hop = 3;
};

struct Utterance {
  std::string id;
  std::string domain;  // leaf domain name, e.g. "youtube/news"
  Mat features;  // post-frontend
  TokenSequence tokens;
  Index raw_frame_count = 0;
};

enum class SamplingKind { uniform_domain, uniform_subdomain, count_weighted };

std::string to_string(SamplingKind kind);
SamplingKind sampling_kind_from_string(const std::string& s);

/// Output frame i stacks raw frames [i*hop, i*hop + stack), zero-padded past
/// the end; there are ceil(T / hop) output frames.
Mat frontend_stack(const Mat& raw_frames, Index stack, Index hop);

/// Raw (pre-frontend) frames and labels for one utterance.
struct RawUtterance {
  Mat frames;
  TokenSequence tokens;
};

RawUtterance synthesize_raw(const DomainSpec& domain, std::mt19937_64& rng);

/// Leaf domain picked for an utterance from `domain` (itself if it has no
/// subdomains, else a subdomain drawn in proportion to weight_hours).
const DomainSpec& pick_leaf(const DomainSpec& domain, std::mt19937_64& rng);

Utterance synthesize_utterance(const DomainSpec& domain, const FrontendConfig& frontend, std::mt19937_64& rng,
                               std::string id = {});

/// Flattened list of leaf domains (domains without subdomains are their own leaf).
std::vector<const DomainSpec*> leaf_domains(const std::vector<DomainSpec>& domains);

/// Probabilities over `domains` (or over leaf_domains for uniform_subdomain).
std::vector<Real> sampling_distribution(SamplingKind kind, const std::vector<DomainSpec>& domains);

const DomainSpec& sample_domain(SamplingKind kind, const std::vector<DomainSpec>& domains, std::mt19937_64& rng);

std::vector<Utterance> make_minibatch(SamplingKind kind, const std::vector<DomainSpec>& domains, Index batch_size,
                                      const FrontendConfig& frontend, std::mt19937_64& rng);

/// Joins consecutive groups of `concat_count` utterances, inserting the rows of
/// `silence` between pieces. A trailing partial group is dropped.
std::vector<Utterance> build_longform_set(const std::vector<Utterance>& sources, Index concat_count,
                                          const Mat& silence);

/// `frames` post-frontend silence frames in the domain's channel, noise included.
Mat silence_span(const DomainSpec& domain, const FrontendConfig& frontend, Index frames, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Default recipe.

struct CorpusRecipe {
  Index raw_dim = 8;
  Index vocab_size = 16;
  Real noise_std = 0.5;
  Real speaker_std = 0.0;
  std::uint64_t seed = 1;
};

/// Shared token and silence prototypes for a seeded corpus.
struct PrototypeTable {
  Mat tokens;
  Vec silence;
};
PrototypeTable make_prototypes(const CorpusRecipe& recipe);

/// Short utterances on the identity channel (the voice-search stand-in).
DomainSpec short_domain(const PrototypeTable& protos, const CorpusRecipe& recipe, const std::string& name = "search");
/// Four domains weighted by data volume: search 56, farfield 38, telephony 4,
/// youtube 190 (long utterances, three subdomains).
std::vector<DomainSpec> default_domains(const CorpusRecipe& recipe);

// ---------------------------------------------------------------------------
// Persistence: a corpus directory holds manifest.jsonl and feats/<id>.bin.

void write_feature_file(const std::filesystem::path& path, const Mat& features);
Mat read_feature_file(const std::filesystem::path& path);

void write_corpus(const std::filesystem::path& dir, const std::vector<Utterance>& utterances);
std::vector<Utterance> read_corpus(const std::filesystem::path& dir);

std::string domains_to_json(const std::vector<DomainSpec>& domains);
std::vector<DomainSpec> domains_from_json(const std::string& text);

}  // namespace rnnt
