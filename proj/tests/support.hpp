#pragma once

#include "rnnt/model.hpp"

#include <functional>
#include <random>

namespace rnnt::testing {

inline Mat random_matrix(Index rows, Index cols, std::mt19937_64& rng, Real scale = 1.0) {
  std::normal_distribution<Real> n(0.0, scale);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Vec random_vector(Index n, std::mt19937_64& rng, Real scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

inline Index uniform(Index lo, Index hi, std::mt19937_64& rng) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline TokenSequence random_tokens(Index n, Index vocab, std::mt19937_64& rng) {
  TokenSequence t;
  for (Index i = 0; i < n; ++i) t.push_back(static_cast<Token>(uniform(0, vocab - 1, rng)));
  return t;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true value is
/// at rounding level from dominating the comparison.
inline Real relative_error(Real a, Real b, Real floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f at the current value of *x.
inline Real central_difference(const std::function<Real()>& f, Real* x, Real h = 1e-6) {
  const Real saved = *x;
  *x = saved + h;
  const Real up = f();
  *x = saved - h;
  const Real down = f();
  *x = saved;
  return (up - down) / (2 * h);
}

/// Small random model with every structural option exercised.
inline ModelConfig tiny_config(std::mt19937_64& rng) {
  ModelConfig c;
  c.feature_dim = uniform(1, 3, rng);
  c.encoder_layers = uniform(1, 2, rng);
  c.encoder_hidden = uniform(1, 3, rng);
  c.encoder_proj = uniform(1, 3, rng);
  c.time_reduction_after = uniform(0, c.encoder_layers - 1, rng);
  c.time_reduction_factor = uniform(1, 2, rng);
  c.prediction_layers = uniform(1, 2, rng);
  c.prediction_hidden = uniform(1, 3, rng);
  c.prediction_proj = uniform(1, 3, rng);
  c.embedding_dim = uniform(1, 3, rng);
  c.joint_dim = uniform(1, 3, rng);
  c.vocab_size = uniform(1, 3, rng);
  c.joint_mode = uniform(0, 1, rng) ? JointMode::concat : JointMode::add;
  if (c.joint_mode == JointMode::add) c.prediction_proj = c.encoder_proj;
  return c;
}

/// Random state with entries of the given scale; last_token is a label or sos.
inline RecurrentState random_state(const ModelConfig& c, std::mt19937_64& rng, Real scale = 0.5) {
  RecurrentState s = RecurrentState::zero(c);
  for (auto& l : s.encoder) {
    l.cell = random_vector(l.cell.size(), rng, scale);
    l.memory = random_vector(l.memory.size(), rng, scale);
  }
  for (auto& l : s.prediction) {
    l.cell = random_vector(l.cell.size(), rng, scale);
    l.memory = random_vector(l.memory.size(), rng, scale);
  }
  s.last_token = static_cast<Token>(uniform(0, c.vocab_size, rng));
  if (s.last_token == c.blank_id()) s.last_token = c.sos_id();
  return s;
}

}  // namespace rnnt::testing
