#pragma once

// Transducer model: LSTM encoder with a stacking time-reduction layer, an
// embedding + LSTM prediction network, and a two-layer joint network.

#include "rnnt/nn.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rnnt {

using Token = int;
using TokenSequence = std::vector<Token>;
using CellState = LstmCellState<Real>;
using LayerParams = LstmLayerParams<Real>;

enum class JointMode { concat, add };

std::string to_string(JointMode mode);
JointMode joint_mode_from_string(const std::string& s);

/// Labels are 0..vocab_size-1; blank is vocab_size (the last logit) and the
/// start-of-sequence symbol is vocab_size + 1 (prediction input only).
struct ModelConfig {
  Index feature_dim = 32;
  Index encoder_layers = 2;
  Index encoder_hidden = 32;
  Index encoder_proj = 16;
  // Stacking happens after this many encoder layers (0 = on the input features).
  Index time_reduction_after = 1;
  Index time_reduction_factor = 2;
  Index prediction_layers = 1;
  Index prediction_hidden = 32;
  Index prediction_proj = 16;
  Index embedding_dim = 8;
  Index joint_dim = 16;
  Index vocab_size = 16;
  JointMode joint_mode = JointMode::concat;

  Token blank_id() const { return static_cast<Token>(vocab_size); }
  Token sos_id() const { return static_cast<Token>(vocab_size + 1); }
  Index output_dim() const { return vocab_size + 1; }
  Index encoder_input_dim(Index layer) const;
  /// Number of encoder output frames produced from `raw_frames` inputs.
  Index reduced_frames(Index raw_frames) const;

  /// Throws ShapeError on inconsistent settings.
  void validate() const;
  /// Analytic parameter count from the configuration alone.
  Index parameter_count() const;

  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  std::vector<LayerParams> encoder;
  std::vector<LayerParams> prediction;
  Mat embedding;  // (vocab_size + 1) x embedding_dim, last row is <sos>
  Mat joint_hidden_weights;  // J x (enc_proj + pred_proj), or J x proj in additive mode
  Vec joint_hidden_bias;
  Mat joint_output_weights;  // (vocab_size + 1) x J
  Vec joint_output_bias;

  static ModelParams zeros(const ModelConfig& config);
  static ModelParams random(const ModelConfig& config, std::mt19937_64& rng);

  std::vector<ParamView<Real>> views();
  Index parameter_count();
  void set_zero();
};

struct Model {
  ModelConfig config;
  ModelParams params;
};

/// Explicit recurrent state of the whole model. The prediction part is the
/// state *before* consuming `last_token`; feeding `last_token` from it yields
/// the prediction row that conditions the next emission.
struct RecurrentState {
  std::vector<CellState> encoder;
  std::vector<CellState> prediction;
  Token last_token = 0;

  static RecurrentState zero(const ModelConfig& config);
  bool all_finite() const;
  bool operator==(const RecurrentState&) const = default;
};

/// Gradient with respect to the LSTM parts of a RecurrentState.
struct StateGradient {
  std::vector<CellState> encoder;
  std::vector<CellState> prediction;
};

// ---------------------------------------------------------------------------

/// Concatenates groups of `factor` consecutive rows; a trailing partial group
/// is dropped.
Mat stack_rows(const Mat& frames, Index factor);

struct EncoderCache {
  std::vector<LstmSequenceCache<Real>> layers;
  std::vector<Index> layer_rows;  // input rows seen by each layer
  Index stacked_from_rows = 0;    // rows before the time-reduction stack
};

struct EncoderOutput {
  Mat frames;  // T' x encoder_proj
  std::vector<CellState> final_state;
};

EncoderOutput encode(const ModelConfig& config, const ModelParams& params, const Mat& features,
                     const std::vector<CellState>& init_state, EncoderCache* cache = nullptr);

struct PredictionCache {
  std::vector<LstmSequenceCache<Real>> layers;
  std::vector<Token> inputs;  // init token followed by the label sequence
};

struct PredictionOutput {
  Mat rows;  // (U+1) x prediction_proj
  std::vector<CellState> final_state;  // before consuming last_token
  Token last_token = 0;
};

/// Row u conditions on (init_token, y_1..y_u).
PredictionOutput predict(const ModelConfig& config, const ModelParams& params, const TokenSequence& tokens,
                         const std::vector<CellState>& init_state, Token init_token,
                         PredictionCache* cache = nullptr);

/// One prediction-network step: consumes `token` from `state` in place and
/// returns the new prediction row.
Vec predict_step(const ModelConfig& config, const ModelParams& params, Token token, std::vector<CellState>& state);

Vec joint(const ModelConfig& config, const ModelParams& params, const Vec& enc_frame, const Vec& pred_row);

struct LogitLattice {
  Index frames = 0;  // T'
  Index labels = 0;  // U
  Mat logits;        // (T' * (U+1)) x (vocab_size + 1)

  Index row(Index t, Index u) const { return t * (labels + 1) + u; }
};

struct ForwardCache {
  EncoderCache encoder;
  PredictionCache prediction;
  Mat enc_frames;
  Mat pred_rows;
  Mat hidden;  // joint tanh layer, one row per lattice cell
};

struct ForwardResult {
  LogitLattice lattice;
  EncoderOutput encoder;
  PredictionOutput prediction;
  RecurrentState final_state;
};

ForwardResult forward_lattice(const ModelConfig& config, const ModelParams& params, const Mat& features,
                              const TokenSequence& tokens, const RecurrentState& init_state,
                              ForwardCache* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns the gradient on the
/// initial recurrent state.
StateGradient backward_lattice(const ModelConfig& config, const ModelParams& params, const ForwardCache& cache,
                               const Mat& grad_logits, ModelParams& grads);

/// Frame-at-a-time encoder for streaming decoding.
class EncoderStream {
 public:
  EncoderStream(const ModelConfig& config, const ModelParams& params, std::vector<CellState> init_state);

  /// Feeds one input frame; returns an encoder output frame when the
  /// time-reduction layer has gathered a full group.
  std::optional<Vec> push(const Vec& frame);
  const std::vector<CellState>& state() const { return state_; }

 private:
  Vec run_layers(Vec x, Index begin, Index end);

  const ModelConfig& config_;
  const ModelParams& params_;
  std::vector<CellState> state_;
  std::vector<Vec> pending_;
};

}  // namespace rnnt
