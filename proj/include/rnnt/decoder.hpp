#pragma once

// Frame-synchronous beam search with adaptive pruning and merging of
// alignments that share a label sequence, plus greedy and exhaustive decoders.

#include "rnnt/model.hpp"

#include <limits>

namespace rnnt {

struct Hypothesis {
  TokenSequence tokens;
  Real log_prob = 0;
  // Prediction-network state before and after consuming the last token, and
  // the prediction row produced by consuming it.
  std::vector<CellState> pred_before;
  std::vector<CellState> pred_after;
  Token last_token = 0;
  Vec pred_row;
  int frame_emissions = 0;
};

struct DecodeOptions {
  Index beam_width = 8;
  // Candidates scoring below best - adaptive_margin (within one expansion
  // level, and in the outgoing beam) are pruned. Infinity disables pruning.
  Real adaptive_margin = 8.0;
  int expansion_cap = 10;

  static constexpr Real kNoMargin = std::numeric_limits<Real>::infinity();
};

/// Best-first, one entry per distinct label sequence.
struct Beam {
  std::vector<Hypothesis> hypotheses;
};

struct DecodeStats {
  Index encoder_frames = 0;
  Index peak_hypotheses = 0;
  Index forced_terminations = 0;
};

Beam initial_beam(const Model& model, const RecurrentState& state);

/// Advances the beam over one encoder frame. Each hypothesis is expanded level
/// by level (one more label per level); every candidate's blank extension
/// feeds the outgoing beam, label extensions feed the next level, and
/// candidates reaching the same label sequence are merged by log-sum-exp.
Beam decode_step(const Model& model, const Vec& enc_frame, const Beam& beam, const DecodeOptions& options,
                 DecodeStats* stats = nullptr);

struct DecodeResult {
  TokenSequence tokens;
  Real log_prob = 0;
  RecurrentState final_state;
  DecodeStats stats;
};

/// Streams the input frames through the encoder and the beam search.
DecodeResult decode_utterance(const Model& model, const Mat& features, const RecurrentState& init_state,
                              const DecodeOptions& options);

/// Argmax symbol at every step (ties prefer blank, then the lowest label).
DecodeResult greedy_decode(const Model& model, const Mat& features, const RecurrentState& init_state,
                           int expansion_cap = 10);

constexpr Index kMaxOracleSequences = 100000;

/// Scores every label sequence of length <= max_labels with the exact lattice
/// likelihood and returns the most likely one.
DecodeResult oracle_decode(const Model& model, const Mat& features, Index max_labels,
                           const RecurrentState& init_state);

}  // namespace rnnt
