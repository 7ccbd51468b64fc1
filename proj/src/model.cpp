#include "rnnt/model.hpp"

namespace rnnt {

std::string to_string(JointMode mode) { return mode == JointMode::concat ? "concat" : "add"; }

JointMode joint_mode_from_string(const std::string& s) {
  if (s == "concat") return JointMode::concat;
  if (s == "add") return JointMode::add;
  throw std::invalid_argument("unknown joint mode '" + s + "'");
}

Index ModelConfig::encoder_input_dim(Index layer) const {
  const Index base = layer == 0 ? feature_dim : encoder_proj;
  return layer == time_reduction_after ? base * time_reduction_factor : base;
}

Index ModelConfig::reduced_frames(Index raw_frames) const { return raw_frames / time_reduction_factor; }

void ModelConfig::validate() const {
  require_shape(feature_dim >= 1, "feature_dim must be >= 1");
  require_shape(encoder_layers >= 1 && prediction_layers >= 1, "need at least one encoder and prediction layer");
  require_shape(encoder_hidden >= 1 && encoder_proj >= 1 && prediction_hidden >= 1 && prediction_proj >= 1,
                "LSTM dims must be >= 1");
  require_shape(time_reduction_after >= 0 && time_reduction_after < encoder_layers,
                "time_reduction_after must be in [0, encoder_layers)");
  require_shape(time_reduction_factor >= 1, "time_reduction_factor must be >= 1");
  require_shape(embedding_dim >= 1 && joint_dim >= 1 && vocab_size >= 1, "embedding/joint/vocab dims must be >= 1");
  if (joint_mode == JointMode::add)
    require_shape(encoder_proj == prediction_proj, "additive joint needs encoder_proj == prediction_proj");
}

Index ModelConfig::parameter_count() const {
  auto lstm = [](Index in, Index h, Index p) { return 4 * h * (in + p) + 4 * h + p * h; };
  Index n = 0;
  for (Index l = 0; l < encoder_layers; ++l) n += lstm(encoder_input_dim(l), encoder_hidden, encoder_proj);
  for (Index l = 0; l < prediction_layers; ++l)
    n += lstm(l == 0 ? embedding_dim : prediction_proj, prediction_hidden, prediction_proj);
  n += (vocab_size + 1) * embedding_dim;
  const Index joint_in = joint_mode == JointMode::concat ? encoder_proj + prediction_proj : encoder_proj;
  n += joint_dim * joint_in + joint_dim;
  n += output_dim() * joint_dim + output_dim();
  return n;
}

namespace {

Index joint_input_dim(const ModelConfig& c) {
  return c.joint_mode == JointMode::concat ? c.encoder_proj + c.prediction_proj : c.encoder_proj;
}

Index embedding_row(const ModelConfig& c, Token token) {
  if (token == c.sos_id()) return c.vocab_size;
  if (token < 0 || token >= c.vocab_size)
    throw ContractViolation("prediction network input must be a label or <sos>, got " + std::to_string(token));
  return token;
}

template <typename F>
void fill(Eigen::PlainObjectBase<F>& m, std::uniform_real_distribution<Real>& d, std::mt19937_64& rng) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
}

void check_states(const std::vector<CellState>& s, const std::vector<LayerParams>& layers, const char* what) {
  require_shape(s.size() == layers.size(), std::string(what) + ": state has wrong layer count");
  for (size_t l = 0; l < s.size(); ++l)
    require_shape(s[l].cell.size() == layers[l].hidden_dim() && s[l].memory.size() == layers[l].proj_dim(),
                  std::string(what) + ": state dims do not match layer " + std::to_string(l));
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  for (Index l = 0; l < c.encoder_layers; ++l)
    p.encoder.push_back(LayerParams::zeros(c.encoder_input_dim(l), c.encoder_hidden, c.encoder_proj));
  for (Index l = 0; l < c.prediction_layers; ++l)
    p.prediction.push_back(
        LayerParams::zeros(l == 0 ? c.embedding_dim : c.prediction_proj, c.prediction_hidden, c.prediction_proj));
  p.embedding = Mat::Zero(c.vocab_size + 1, c.embedding_dim);
  p.joint_hidden_weights = Mat::Zero(c.joint_dim, joint_input_dim(c));
  p.joint_hidden_bias = Vec::Zero(c.joint_dim);
  p.joint_output_weights = Mat::Zero(c.output_dim(), c.joint_dim);
  p.joint_output_bias = Vec::Zero(c.output_dim());
  return p;
}

ModelParams ModelParams::random(const ModelConfig& c, std::mt19937_64& rng) {
  c.validate();
  ModelParams p;
  for (Index l = 0; l < c.encoder_layers; ++l)
    p.encoder.push_back(LayerParams::random(c.encoder_input_dim(l), c.encoder_hidden, c.encoder_proj, rng));
  for (Index l = 0; l < c.prediction_layers; ++l)
    p.prediction.push_back(LayerParams::random(l == 0 ? c.embedding_dim : c.prediction_proj, c.prediction_hidden,
                                               c.prediction_proj, rng));
  p.embedding = Mat(c.vocab_size + 1, c.embedding_dim);
  std::uniform_real_distribution<Real> emb(-1.0, 1.0);
  fill(p.embedding, emb, rng);
  const Real r1 = 1.0 / std::sqrt(Real(joint_input_dim(c)));
  std::uniform_real_distribution<Real> d1(-r1, r1);
  p.joint_hidden_weights = Mat(c.joint_dim, joint_input_dim(c));
  fill(p.joint_hidden_weights, d1, rng);
  p.joint_hidden_bias = Vec::Zero(c.joint_dim);
  const Real r2 = 1.0 / std::sqrt(Real(c.joint_dim));
  std::uniform_real_distribution<Real> d2(-r2, r2);
  p.joint_output_weights = Mat(c.output_dim(), c.joint_dim);
  fill(p.joint_output_weights, d2, rng);
  p.joint_output_bias = Vec::Zero(c.output_dim());
  return p;
}

std::vector<ParamView<Real>> ModelParams::views() {
  std::vector<ParamView<Real>> v;
  for (size_t l = 0; l < encoder.size(); ++l) encoder[l].append_views("encoder." + std::to_string(l), v);
  v.push_back(make_view<Real>("prediction.embedding", embedding));
  for (size_t l = 0; l < prediction.size(); ++l) prediction[l].append_views("prediction." + std::to_string(l), v);
  v.push_back(make_view<Real>("joint.hidden_weights", joint_hidden_weights));
  v.push_back(make_view<Real>("joint.hidden_bias", joint_hidden_bias));
  v.push_back(make_view<Real>("joint.output_weights", joint_output_weights));
  v.push_back(make_view<Real>("joint.output_bias", joint_output_bias));
  return v;
}

Index ModelParams::parameter_count() {
  Index n = 0;
  for (const auto& v : views()) n += static_cast<Index>(v.values.size());
  return n;
}

void ModelParams::set_zero() {
  for (auto& v : views()) std::fill(v.values.begin(), v.values.end(), 0.0);
}

RecurrentState RecurrentState::zero(const ModelConfig& c) {
  RecurrentState s;
  s.encoder.assign(static_cast<size_t>(c.encoder_layers), CellState::zeros(c.encoder_hidden, c.encoder_proj));
  s.prediction.assign(static_cast<size_t>(c.prediction_layers),
                      CellState::zeros(c.prediction_hidden, c.prediction_proj));
  s.last_token = c.sos_id();
  return s;
}

bool RecurrentState::all_finite() const {
  for (const auto& s : encoder)
    if (!s.all_finite()) return false;
  for (const auto& s : prediction)
    if (!s.all_finite()) return false;
  return true;
}

// ---------------------------------------------------------------------------

Mat stack_rows(const Mat& frames, Index factor) {
  const Index out_rows = frames.rows() / factor;
  Mat out(out_rows, frames.cols() * factor);
  // Row-major storage makes the stack a reshape of the leading rows.
  out = Eigen::Map<const Mat>(frames.data(), out_rows, frames.cols() * factor);
  return out;
}

namespace {

Mat unstack_rows(const Mat& grad, Index original_rows, Index width) {
  Mat out = Mat::Zero(original_rows, width);
  Eigen::Map<Mat>(out.data(), grad.rows(), grad.cols()) = grad;
  return out;
}

}  // namespace

EncoderOutput encode(const ModelConfig& config, const ModelParams& params, const Mat& features,
                     const std::vector<CellState>& init_state, EncoderCache* cache) {
  require_shape(features.rows() == 0 || features.cols() == config.feature_dim,
                "encode: features have " + std::to_string(features.cols()) + " columns, expected " +
                    std::to_string(config.feature_dim));
  check_states(init_state, params.encoder, "encode");
  EncoderOutput out;
  out.final_state = init_state;
  if (cache) {
    cache->layers.assign(params.encoder.size(), {});
    cache->layer_rows.assign(params.encoder.size(), 0);
  }
  if (cache) cache->stacked_from_rows = 0;
  if (features.rows() == 0) {
    out.frames = Mat(0, config.encoder_proj);
    return out;
  }
  Mat x = features;
  for (size_t l = 0; l < params.encoder.size(); ++l) {
    if (static_cast<Index>(l) == config.time_reduction_after) {
      if (cache) cache->stacked_from_rows = x.rows();
      x = stack_rows(x, config.time_reduction_factor);
    }
    if (cache) cache->layer_rows[l] = x.rows();
    x = lstm_sequence_forward(params.encoder[l], x, out.final_state[l], cache ? &cache->layers[l] : nullptr);
  }
  out.frames = std::move(x);
  return out;
}

PredictionOutput predict(const ModelConfig& config, const ModelParams& params, const TokenSequence& tokens,
                         const std::vector<CellState>& init_state, Token init_token, PredictionCache* cache) {
  check_states(init_state, params.prediction, "predict");
  for (Token t : tokens)
    if (t == config.blank_id()) throw ContractViolation("predict: blank is never a prediction-network input");

  std::vector<Token> inputs;
  inputs.reserve(tokens.size() + 1);
  inputs.push_back(init_token);
  inputs.insert(inputs.end(), tokens.begin(), tokens.end());
  const auto n = static_cast<Index>(inputs.size());

  Mat x(n, config.embedding_dim);
  for (Index i = 0; i < n; ++i) x.row(i) = params.embedding.row(embedding_row(config, inputs[static_cast<size_t>(i)]));

  PredictionOutput out;
  out.final_state = init_state;
  out.last_token = inputs.back();
  if (cache) {
    cache->inputs = inputs;
    cache->layers.assign(params.prediction.size(), {});
  }
  std::vector<CellState> state = init_state;
  for (size_t l = 0; l < params.prediction.size(); ++l) {
    // Run all but the last input first so the state before the last token
    // can be kept for carry-over.
    LstmSequenceCache<Real> head_cache;
    LstmSequenceCache<Real> tail_cache;
    const bool keep = cache != nullptr;
    Mat head = lstm_sequence_forward(params.prediction[l], Mat(x.topRows(n - 1)), state[l], keep ? &head_cache : nullptr);
    out.final_state[l] = state[l];
    Mat tail = lstm_sequence_forward(params.prediction[l], Mat(x.bottomRows(1)), state[l], keep ? &tail_cache : nullptr);
    Mat y(n, params.prediction[l].proj_dim());
    y.topRows(n - 1) = head;
    y.bottomRows(1) = tail;
    x = std::move(y);
    if (keep) {
      auto& steps = cache->layers[l].steps;
      steps = std::move(head_cache.steps);
      steps.push_back(std::move(tail_cache.steps.front()));
    }
  }
  out.rows = std::move(x);
  return out;
}

Vec predict_step(const ModelConfig& config, const ModelParams& params, Token token, std::vector<CellState>& state) {
  check_states(state, params.prediction, "predict_step");
  Vec x = params.embedding.row(embedding_row(config, token)).transpose();
  for (size_t l = 0; l < params.prediction.size(); ++l) {
    state[l] = lstm_step(params.prediction[l], x, state[l]);
    x = state[l].memory;
  }
  return x;
}

Vec joint(const ModelConfig& config, const ModelParams& params, const Vec& enc_frame, const Vec& pred_row) {
  require_shape(enc_frame.size() == config.encoder_proj && pred_row.size() == config.prediction_proj,
                "joint: input dims do not match config");
  Vec input;
  if (config.joint_mode == JointMode::concat) {
    input.resize(enc_frame.size() + pred_row.size());
    input << enc_frame, pred_row;
  } else {
    input = enc_frame + pred_row;
  }
  const Vec hidden = ffn_tanh_forward(params.joint_hidden_weights, params.joint_hidden_bias, input);
  return ffn_linear_forward(params.joint_output_weights, params.joint_output_bias, hidden);
}

ForwardResult forward_lattice(const ModelConfig& config, const ModelParams& params, const Mat& features,
                              const TokenSequence& tokens, const RecurrentState& init_state, ForwardCache* cache) {
  ForwardResult r;
  r.encoder = encode(config, params, features, init_state.encoder, cache ? &cache->encoder : nullptr);
  r.prediction = predict(config, params, tokens, init_state.prediction, init_state.last_token,
                         cache ? &cache->prediction : nullptr);
  r.final_state.encoder = r.encoder.final_state;
  r.final_state.prediction = r.prediction.final_state;
  r.final_state.last_token = r.prediction.last_token;

  const Mat& h = r.encoder.frames;
  const Mat& p = r.prediction.rows;
  const Index frames = h.rows();
  const Index rows_u = p.rows();
  const Index j = config.joint_dim;

  Mat a, b;
  if (config.joint_mode == JointMode::concat) {
    a = h * params.joint_hidden_weights.leftCols(config.encoder_proj).transpose();
    b = p * params.joint_hidden_weights.rightCols(config.prediction_proj).transpose();
  } else {
    a = h * params.joint_hidden_weights.transpose();
    b = p * params.joint_hidden_weights.transpose();
  }
  b.rowwise() += params.joint_hidden_bias.transpose();

  Mat hidden(frames * rows_u, j);
  for (Index t = 0; t < frames; ++t)
    hidden.middleRows(t * rows_u, rows_u) = (b.rowwise() + a.row(t)).array().tanh().matrix();

  r.lattice.frames = frames;
  r.lattice.labels = static_cast<Index>(tokens.size());
  r.lattice.logits = hidden * params.joint_output_weights.transpose();
  r.lattice.logits.rowwise() += params.joint_output_bias.transpose();

  if (cache) {
    cache->enc_frames = h;
    cache->pred_rows = p;
    cache->hidden = std::move(hidden);
  }
  return r;
}

StateGradient backward_lattice(const ModelConfig& config, const ModelParams& params, const ForwardCache& cache,
                               const Mat& grad_logits, ModelParams& grads) {
  const Index frames = cache.enc_frames.rows();
  const Index rows_u = cache.pred_rows.rows();
  if (cache.prediction.layers.size() != params.prediction.size() ||
      cache.encoder.layers.size() != params.encoder.size())
    throw ContractViolation("backward_lattice: missing forward cache");
  require_shape(grad_logits.rows() == frames * rows_u && grad_logits.cols() == config.output_dim() &&
                    cache.hidden.rows() == frames * rows_u,
                "backward_lattice: gradient does not match cached lattice");

  grads.joint_output_weights.noalias() += grad_logits.transpose() * cache.hidden;
  grads.joint_output_bias += grad_logits.colwise().sum().transpose();
  Mat d_pre = grad_logits * params.joint_output_weights;
  d_pre.array() *= (1.0 - cache.hidden.array().square());
  grads.joint_hidden_bias += d_pre.colwise().sum().transpose();

  Mat d_a = Mat::Zero(frames, config.joint_dim);
  Mat d_b = Mat::Zero(rows_u, config.joint_dim);
  for (Index t = 0; t < frames; ++t) {
    auto block = d_pre.middleRows(t * rows_u, rows_u);
    d_a.row(t) = block.colwise().sum();
    d_b += block;
  }

  Mat d_h, d_p;
  if (config.joint_mode == JointMode::concat) {
    const auto w_enc = params.joint_hidden_weights.leftCols(config.encoder_proj);
    const auto w_pred = params.joint_hidden_weights.rightCols(config.prediction_proj);
    grads.joint_hidden_weights.leftCols(config.encoder_proj).noalias() += d_a.transpose() * cache.enc_frames;
    grads.joint_hidden_weights.rightCols(config.prediction_proj).noalias() += d_b.transpose() * cache.pred_rows;
    d_h = d_a * w_enc;
    d_p = d_b * w_pred;
  } else {
    grads.joint_hidden_weights.noalias() += d_a.transpose() * cache.enc_frames;
    grads.joint_hidden_weights.noalias() += d_b.transpose() * cache.pred_rows;
    d_h = d_a * params.joint_hidden_weights;
    d_p = d_b * params.joint_hidden_weights;
  }

  StateGradient sg;

  // Encoder, top layer down, undoing the time-reduction stack on the way.
  sg.encoder.resize(params.encoder.size());
  Mat d_x = std::move(d_h);
  for (auto l = static_cast<Index>(params.encoder.size()) - 1; l >= 0; --l) {
    const auto& layer = params.encoder[static_cast<size_t>(l)];
    CellState g = CellState::zeros_like(layer);
    d_x = lstm_sequence_backward(layer, cache.encoder.layers[static_cast<size_t>(l)], d_x, g,
                                 grads.encoder[static_cast<size_t>(l)]);
    sg.encoder[static_cast<size_t>(l)] = std::move(g);
    if (l == config.time_reduction_after && l > 0) {
      d_x = unstack_rows(d_x, cache.encoder.stacked_from_rows, config.encoder_proj);
    }
  }

  // Prediction network.
  sg.prediction.resize(params.prediction.size());
  Mat d_y = std::move(d_p);
  for (auto l = static_cast<Index>(params.prediction.size()) - 1; l >= 0; --l) {
    const auto& layer = params.prediction[static_cast<size_t>(l)];
    CellState g = CellState::zeros_like(layer);
    d_y = lstm_sequence_backward(layer, cache.prediction.layers[static_cast<size_t>(l)], d_y, g,
                                 grads.prediction[static_cast<size_t>(l)]);
    sg.prediction[static_cast<size_t>(l)] = std::move(g);
  }
  for (size_t i = 0; i < cache.prediction.inputs.size(); ++i)
    grads.embedding.row(embedding_row(config, cache.prediction.inputs[i])) += d_y.row(static_cast<Index>(i));
  return sg;
}

// ---------------------------------------------------------------------------

EncoderStream::EncoderStream(const ModelConfig& config, const ModelParams& params, std::vector<CellState> init_state)
    : config_(config), params_(params), state_(std::move(init_state)) {
  check_states(state_, params_.encoder, "EncoderStream");
}

Vec EncoderStream::run_layers(Vec x, Index begin, Index end) {
  for (Index l = begin; l < end; ++l) {
    state_[static_cast<size_t>(l)] = lstm_step(params_.encoder[static_cast<size_t>(l)], x, state_[static_cast<size_t>(l)]);
    x = state_[static_cast<size_t>(l)].memory;
  }
  return x;
}

std::optional<Vec> EncoderStream::push(const Vec& frame) {
  require_shape(frame.size() == config_.feature_dim, "EncoderStream: frame width mismatch");
  pending_.push_back(run_layers(frame, 0, config_.time_reduction_after));
  if (static_cast<Index>(pending_.size()) < config_.time_reduction_factor) return std::nullopt;
  const Index w = pending_.front().size();
  Vec stacked(w * static_cast<Index>(pending_.size()));
  for (size_t i = 0; i < pending_.size(); ++i) stacked.segment(static_cast<Index>(i) * w, w) = pending_[i];
  pending_.clear();
  return run_layers(std::move(stacked), config_.time_reduction_after, config_.encoder_layers);
}

}  // namespace rnnt
