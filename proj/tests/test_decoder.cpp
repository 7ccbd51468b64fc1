#include "rnnt/decoder.hpp"
#include "rnnt/loss.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace rnnt;
using namespace rnnt::testing;

namespace {

ModelConfig small_config(Index vocab = 2) {
  ModelConfig c;
  c.feature_dim = 3;
  c.encoder_layers = 1;
  c.encoder_hidden = 4;
  c.encoder_proj = 3;
  c.time_reduction_after = 0;
  c.time_reduction_factor = 1;
  c.prediction_hidden = 4;
  c.prediction_proj = 3;
  c.embedding_dim = 3;
  c.joint_dim = 4;
  c.vocab_size = vocab;
  return c;
}

// Random weights scaled up so that label and blank probabilities are comparable.
Model random_model(const ModelConfig& c, std::mt19937_64& rng, Real scale = 3.0) {
  Model m{c, ModelParams::random(c, rng)};
  for (auto& v : m.params.views())
    for (auto& x : v.values) x = std::normal_distribution<Real>(0.0, 1.0)(rng) * scale / 2;
  return m;
}

Model always_blank_model(const ModelConfig& c) {
  Model m{c, ModelParams::zeros(c)};
  m.params.joint_output_bias(c.blank_id()) = 20.0;
  return m;
}

Real exact_log_likelihood(const Model& m, const Mat& x, const TokenSequence& y, const RecurrentState& s) {
  const ForwardResult f = forward_lattice(m.config, m.params, x, y, s);
  return rnnt_forward(f.lattice, y, m.config.blank_id()).log_likelihood;
}

const DecodeOptions kExhaustive{64, DecodeOptions::kNoMargin, 10};

}  // namespace

TEST(Decoder, EmptyInput) {
  const ModelConfig c = small_config();
  std::mt19937_64 rng(41);
  const Model m = random_model(c, rng);
  const auto r = decode_utterance(m, Mat(0, c.feature_dim), RecurrentState::zero(c), DecodeOptions{});
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_EQ(r.log_prob, 0.0);
  EXPECT_TRUE(greedy_decode(m, Mat(0, c.feature_dim), RecurrentState::zero(c)).tokens.empty());
}

TEST(Decoder, AlwaysBlankModelAddsBlankScoreOnly) {
  const ModelConfig c = small_config();
  const Model m = always_blank_model(c);
  Beam beam = initial_beam(m, RecurrentState::zero(c));
  const Vec lp = log_softmax(m.params.joint_output_bias);
  for (int t = 0; t < 4; ++t) {
    const Real before = beam.hypotheses.front().log_prob;
    beam = decode_step(m, Vec(Vec::Zero(c.encoder_proj)), beam, DecodeOptions{});
    ASSERT_EQ(beam.hypotheses.size(), 1u);
    EXPECT_TRUE(beam.hypotheses.front().tokens.empty());
    EXPECT_NEAR(beam.hypotheses.front().log_prob, before + lp(c.blank_id()), 1e-14);
  }
  std::mt19937_64 rng(42);
  EXPECT_TRUE(greedy_decode(m, random_matrix(6, c.feature_dim, rng), RecurrentState::zero(c)).tokens.empty());
  EXPECT_TRUE(oracle_decode(m, random_matrix(3, c.feature_dim, rng), 2, RecurrentState::zero(c)).tokens.empty());
}

// Label a is emitted from <sos> context and blank wins once a has been consumed.
TEST(Decoder, GreedyHandBuiltModel) {
  ModelConfig c = small_config(1);
  c.prediction_hidden = 1;
  c.prediction_proj = 1;
  c.embedding_dim = 1;
  c.joint_dim = 1;
  Model m{c, ModelParams::zeros(c)};
  auto& lstm = m.params.prediction[0];
  lstm.input_weights << 0, 0, 1, 0;  // only the candidate sees the embedding
  lstm.bias << 10, -10, 0, 10;       // input gate open, forget closed, output open
  lstm.projection << 1;
  m.params.embedding << 3, 0;  // rows: label a, <sos>
  m.params.joint_hidden_weights.setZero();
  m.params.joint_hidden_weights(0, c.encoder_proj) = 3;
  m.params.joint_output_weights << -20, 0;
  m.params.joint_output_bias << 5, 0;

  std::mt19937_64 rng(43);
  const Mat x = random_matrix(2, c.feature_dim, rng);
  const auto r = greedy_decode(m, x, RecurrentState::zero(c));
  EXPECT_EQ(r.tokens, (TokenSequence{0}));
  EXPECT_EQ(decode_utterance(m, x, RecurrentState::zero(c), DecodeOptions{1, 0.0, 10}).tokens, r.tokens);
  EXPECT_EQ(oracle_decode(m, x, 3, RecurrentState::zero(c)).tokens, r.tokens);
}

TEST(Decoder, ExpansionCapForcesBlank) {
  const ModelConfig c = small_config();
  Model m{c, ModelParams::zeros(c)};
  m.params.joint_output_bias(0) = 5.0;  // label 0 always most likely
  std::mt19937_64 rng(44);
  const Mat x = random_matrix(3, c.feature_dim, rng);
  const auto g = greedy_decode(m, x, RecurrentState::zero(c), 4);
  EXPECT_EQ(g.tokens.size(), 12u);
  EXPECT_EQ(g.stats.forced_terminations, 3);
  DecodeStats stats;
  Beam beam = initial_beam(m, RecurrentState::zero(c));
  const DecodeOptions opt{2, 8.0, 4};
  beam = decode_step(m, Vec(Vec::Zero(c.encoder_proj)), beam, opt, &stats);
  EXPECT_LE(beam.hypotheses.front().tokens.size(), 4u);
  EXPECT_GT(stats.forced_terminations, 0);
}

TEST(Decoder, BeamOneMarginZeroIsGreedy) {
  std::mt19937_64 rng(45);
  for (int i = 0; i < 50; ++i) {
    const ModelConfig c = small_config(uniform(1, 4, rng));
    const Model m = random_model(c, rng);
    const Mat x = random_matrix(uniform(0, 8, rng), c.feature_dim, rng);
    const RecurrentState s = random_state(c, rng);
    const auto g = greedy_decode(m, x, s);
    const auto b = decode_utterance(m, x, s, DecodeOptions{1, 0.0, 10});
    EXPECT_EQ(g.tokens, b.tokens);
    EXPECT_NEAR(g.log_prob, b.log_prob, 1e-12);
    EXPECT_EQ(g.final_state, b.final_state);
  }
}

TEST(Decoder, MergesAlignmentsOfOneSequence) {
  // Two frames, one label: "a <b> <b>" and "<b> a <b>" both yield [a].
  const ModelConfig c = small_config(1);
  std::mt19937_64 rng(46);
  const Model m = random_model(c, rng, 1.0);
  const Mat x = random_matrix(2, c.feature_dim, rng);
  const RecurrentState s = RecurrentState::zero(c);
  const auto r = decode_utterance(m, x, s, kExhaustive);
  EncoderOutput enc = encode(c, m.params, x, s.encoder);
  Beam beam = initial_beam(m, s);
  for (Index t = 0; t < enc.frames.rows(); ++t) beam = decode_step(m, enc.frames.row(t).transpose(), beam, kExhaustive);
  const auto it = std::find_if(beam.hypotheses.begin(), beam.hypotheses.end(),
                               [](const Hypothesis& h) { return h.tokens == TokenSequence{0}; });
  ASSERT_NE(it, beam.hypotheses.end());
  const ForwardResult f = forward_lattice(c, m.params, x, {0}, s);
  const auto paths = enumerate_alignments(2, 1);
  ASSERT_EQ(paths.size(), 2u);
  const Real p1 = alignment_log_prob(f.lattice, {0}, c.blank_id(), paths[0]);
  const Real p2 = alignment_log_prob(f.lattice, {0}, c.blank_id(), paths[1]);
  EXPECT_NEAR(it->log_prob, log_add(p1, p2), 1e-12);
  EXPECT_GT(it->log_prob, std::max(p1, p2));
  // one entry per label sequence
  for (size_t i = 0; i < beam.hypotheses.size(); ++i)
    for (size_t j = i + 1; j < beam.hypotheses.size(); ++j)
      EXPECT_NE(beam.hypotheses[i].tokens, beam.hypotheses[j].tokens);
  EXPECT_NEAR(r.log_prob, beam.hypotheses.front().log_prob, 0.0);
}

TEST(Decoder, ExhaustiveScoresAreExactLikelihoods) {
  std::mt19937_64 rng(47);
  for (int i = 0; i < 40; ++i) {
    const ModelConfig c = small_config(2);
    const Model m = random_model(c, rng);
    const Mat x = random_matrix(uniform(1, 3, rng), c.feature_dim, rng);
    const RecurrentState s = RecurrentState::zero(c);
    EncoderOutput enc = encode(c, m.params, x, s.encoder);
    Beam beam = initial_beam(m, s);
    for (Index t = 0; t < enc.frames.rows(); ++t)
      beam = decode_step(m, enc.frames.row(t).transpose(), beam, DecodeOptions{1000, DecodeOptions::kNoMargin, 3});
    for (const auto& h : beam.hypotheses) {
      if (h.tokens.size() > 3) continue;  // cap does not bind below this length
      EXPECT_NEAR(h.log_prob, exact_log_likelihood(m, x, h.tokens, s), 1e-9);
    }
  }
}

TEST(Decoder, BeamAgreesWithExhaustiveOracle) {
  std::mt19937_64 rng(52);
  int agree = 0;
  for (int i = 0; i < 100; ++i) {
    const ModelConfig c = small_config(2);
    const Model m = random_model(c, rng, 1.0);
    const Mat x = random_matrix(uniform(1, 3, rng), c.feature_dim, rng);
    const RecurrentState s = RecurrentState::zero(c);
    const auto oracle = oracle_decode(m, x, 6, s);
    const auto beam = decode_utterance(m, x, s, DecodeOptions{64, DecodeOptions::kNoMargin, 10});
    if (beam.tokens == oracle.tokens) ++agree;
  }
  EXPECT_GE(agree, 95);
}

// Pruning decisions depend on the competing candidates, so a wider beam can
// occasionally drop an alignment that a narrower one kept. The merged score
// is always a lower bound on the exact likelihood, and shrinking with a wider
// beam stays rare.
TEST(Decoder, MergedScoreMostlyGrowsWithWiderBeam) {
  std::mt19937_64 rng(48);
  int compared = 0;
  int shrunk = 0;
  for (int i = 0; i < 100; ++i) {
    const ModelConfig c = small_config(3);
    const Model m = random_model(c, rng);
    const Mat x = random_matrix(uniform(2, 6, rng), c.feature_dim, rng);
    const RecurrentState s = RecurrentState::zero(c);
    EncoderOutput enc = encode(c, m.params, x, s.encoder);
    std::vector<Beam> beams;
    for (Index w : {2, 4, 8, 16}) {
      Beam beam = initial_beam(m, s);
      for (Index t = 0; t < enc.frames.rows(); ++t)
        beam = decode_step(m, enc.frames.row(t).transpose(), beam, DecodeOptions{w, DecodeOptions::kNoMargin, 10});
      for (const auto& h : beam.hypotheses)
        EXPECT_LE(h.log_prob, exact_log_likelihood(m, x, h.tokens, s) + 1e-9);
      beams.push_back(beam);
    }
    for (size_t k = 0; k + 1 < beams.size(); ++k)
      for (const auto& h : beams[k].hypotheses)
        for (const auto& g : beams[k + 1].hypotheses)
          if (g.tokens == h.tokens) {
            ++compared;
            if (g.log_prob < h.log_prob - 1e-9) ++shrunk;
          }
  }
  EXPECT_GT(compared, 300);
  EXPECT_LE(shrunk, compared / 20) << shrunk << " of " << compared;
}

TEST(Decoder, PeakHypothesesBounded) {
  std::mt19937_64 rng(49);
  for (int i = 0; i < 10; ++i) {
    const ModelConfig c = small_config(4);
    const Model m = random_model(c, rng);
    const Mat x = random_matrix(40, c.feature_dim, rng);
    for (Index w : {1, 3, 8}) {
      const DecodeOptions opt{w, 8.0, 10};
      const auto r = decode_utterance(m, x, RecurrentState::zero(c), opt);
      EXPECT_LE(r.stats.peak_hypotheses, w * (opt.expansion_cap + 1));
      EXPECT_EQ(r.stats.encoder_frames, 40);
    }
  }
}

TEST(Decoder, StreamingContinuationWithBeamOne) {
  std::mt19937_64 rng(50);
  for (int i = 0; i < 20; ++i) {
    ModelConfig c = small_config(3);
    c.encoder_layers = 2;
    c.time_reduction_after = 1;
    c.time_reduction_factor = 2;
    const Model m = random_model(c, rng);
    const Mat x1 = random_matrix(2 * uniform(1, 5, rng), c.feature_dim, rng);
    const Mat x2 = random_matrix(uniform(1, 9, rng), c.feature_dim, rng);
    Mat x(x1.rows() + x2.rows(), c.feature_dim);
    x << x1, x2;
    const DecodeOptions opt{1, 0.0, 10};
    const auto whole = decode_utterance(m, x, RecurrentState::zero(c), opt);
    const auto first = decode_utterance(m, x1, RecurrentState::zero(c), opt);
    const auto second = decode_utterance(m, x2, first.final_state, opt);
    TokenSequence joined = first.tokens;
    joined.insert(joined.end(), second.tokens.begin(), second.tokens.end());
    EXPECT_EQ(joined, whole.tokens);
    EXPECT_NEAR(first.log_prob + second.log_prob, whole.log_prob, 1e-10);
  }
}

TEST(Decoder, Deterministic) {
  std::mt19937_64 rng(51);
  const ModelConfig c = small_config(4);
  const Model m = random_model(c, rng);
  const Mat x = random_matrix(20, c.feature_dim, rng);
  const auto a = decode_utterance(m, x, RecurrentState::zero(c), DecodeOptions{});
  const auto b = decode_utterance(m, x, RecurrentState::zero(c), DecodeOptions{});
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.log_prob, b.log_prob);
}

TEST(Decoder, OracleSizeGuard) {
  const ModelConfig c = small_config(16);
  const Model m{c, ModelParams::zeros(c)};
  EXPECT_THROW(oracle_decode(m, Mat::Zero(2, c.feature_dim), 5, RecurrentState::zero(c)), ContractViolation);
  const auto r = oracle_decode(m, Mat::Zero(2, c.feature_dim), 0, RecurrentState::zero(c));
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_NEAR(r.log_prob, exact_log_likelihood(m, Mat::Zero(2, c.feature_dim), {}, RecurrentState::zero(c)), 1e-14);
}
