#pragma once

// Dense layer primitives with hand-derived reverse passes: projected LSTM,
// feed-forward maps, log-softmax, Adam and global-norm clipping.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rnnt {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;
using Real = double;
using Mat = Matrix<Real>;
using Vec = Vector<Real>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

/// A named, flat, row-major view of one parameter tensor.
template <typename Scalar>
struct ParamView {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::span<Scalar> values;
};

template <typename Scalar, typename Derived>
ParamView<Scalar> make_view(std::string name, Eigen::PlainObjectBase<Derived>& m) {
  return {std::move(name), m.rows(), m.cols(), std::span<Scalar>(m.data(), static_cast<size_t>(m.size()))};
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// LSTM with output projection (no peepholes). Gate blocks are stacked in the
// order input, forget, cell candidate, output.
//
//   a = W_x x + W_m m_prev + b
//   c = f * c_prev + i * g,   h = o * tanh(c),   m = W_p h
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LstmLayerParams {
  Matrix<Scalar> input_weights;      // 4H x I
  Matrix<Scalar> recurrent_weights;  // 4H x P
  Vector<Scalar> bias;               // 4H
  Matrix<Scalar> projection;         // P x H

  Index input_dim() const { return input_weights.cols(); }
  Index hidden_dim() const { return projection.cols(); }
  Index proj_dim() const { return projection.rows(); }

  static LstmLayerParams zeros(Index input_dim, Index hidden_dim, Index proj_dim) {
    LstmLayerParams p;
    p.input_weights = Matrix<Scalar>::Zero(4 * hidden_dim, input_dim);
    p.recurrent_weights = Matrix<Scalar>::Zero(4 * hidden_dim, proj_dim);
    p.bias = Vector<Scalar>::Zero(4 * hidden_dim);
    p.projection = Matrix<Scalar>::Zero(proj_dim, hidden_dim);
    return p;
  }

  /// uniform(-r, r) with r = 1/sqrt(fan_in); forget-gate bias starts at +1.
  template <typename Rng>
  static LstmLayerParams random(Index input_dim, Index hidden_dim, Index proj_dim, Rng& rng) {
    LstmLayerParams p = zeros(input_dim, hidden_dim, proj_dim);
    const Scalar r_gate = Scalar(1) / std::sqrt(Scalar(input_dim + proj_dim));
    const Scalar r_proj = Scalar(1) / std::sqrt(Scalar(hidden_dim));
    std::uniform_real_distribution<Scalar> gate(-r_gate, r_gate);
    std::uniform_real_distribution<Scalar> proj(-r_proj, r_proj);
    for (Index i = 0; i < p.input_weights.size(); ++i) p.input_weights.data()[i] = gate(rng);
    for (Index i = 0; i < p.recurrent_weights.size(); ++i) p.recurrent_weights.data()[i] = gate(rng);
    for (Index i = 0; i < p.projection.size(); ++i) p.projection.data()[i] = proj(rng);
    p.bias.segment(hidden_dim, hidden_dim).setOnes();
    return p;
  }

  Index parameter_count() const {
    return input_weights.size() + recurrent_weights.size() + bias.size() + projection.size();
  }

  void append_views(const std::string& prefix, std::vector<ParamView<Scalar>>& out) {
    out.push_back(make_view<Scalar>(prefix + ".input_weights", input_weights));
    out.push_back(make_view<Scalar>(prefix + ".recurrent_weights", recurrent_weights));
    out.push_back(make_view<Scalar>(prefix + ".bias", bias));
    out.push_back(make_view<Scalar>(prefix + ".projection", projection));
  }
};

template <typename Scalar>
struct LstmCellState {
  Vector<Scalar> cell;    // H
  Vector<Scalar> memory;  // P, also the layer output

  static LstmCellState zeros(Index hidden_dim, Index proj_dim) {
    return {Vector<Scalar>::Zero(hidden_dim), Vector<Scalar>::Zero(proj_dim)};
  }
  static LstmCellState zeros_like(const LstmLayerParams<Scalar>& p) {
    return zeros(p.hidden_dim(), p.proj_dim());
  }
  bool all_finite() const { return cell.allFinite() && memory.allFinite(); }
  bool operator==(const LstmCellState& o) const { return cell == o.cell && memory == o.memory; }
};

/// Activations kept by the forward step for the reverse pass.
template <typename Scalar>
struct LstmStepCache {
  Vector<Scalar> input;
  LstmCellState<Scalar> prev;
  Vector<Scalar> in_gate, forget_gate, candidate, out_gate;
  Vector<Scalar> cell, tanh_cell, hidden;

  bool empty() const { return hidden.size() == 0; }
};

namespace detail {

template <typename Scalar>
void check_state(const LstmLayerParams<Scalar>& p, const LstmCellState<Scalar>& s) {
  require_shape(s.cell.size() == p.hidden_dim() && s.memory.size() == p.proj_dim(),
                "lstm: state does not match layer dims");
}

/// Gate nonlinearities and cell update given pre-activations `a` (4H).
template <typename Scalar>
LstmCellState<Scalar> lstm_cell_update(const LstmLayerParams<Scalar>& p, const Vector<Scalar>& a,
                                       const LstmCellState<Scalar>& prev, LstmStepCache<Scalar>* cache) {
  const Index h = p.hidden_dim();
  Vector<Scalar> i = a.segment(0, h).unaryExpr([](Scalar x) { return sigmoid(x); });
  Vector<Scalar> f = a.segment(h, h).unaryExpr([](Scalar x) { return sigmoid(x); });
  Vector<Scalar> g = a.segment(2 * h, h).array().tanh();
  Vector<Scalar> o = a.segment(3 * h, h).unaryExpr([](Scalar x) { return sigmoid(x); });

  LstmCellState<Scalar> next;
  next.cell = f.cwiseProduct(prev.cell) + i.cwiseProduct(g);
  Vector<Scalar> tanh_cell = next.cell.array().tanh();
  Vector<Scalar> hidden = o.cwiseProduct(tanh_cell);
  next.memory.noalias() = p.projection * hidden;

  if (cache) {
    cache->prev = prev;
    cache->in_gate = std::move(i);
    cache->forget_gate = std::move(f);
    cache->candidate = std::move(g);
    cache->out_gate = std::move(o);
    cache->cell = next.cell;
    cache->tanh_cell = std::move(tanh_cell);
    cache->hidden = std::move(hidden);
  }
  return next;
}

}  // namespace detail

/// One recurrence step. The layer output is `result.memory`.
template <typename Scalar>
LstmCellState<Scalar> lstm_step(const LstmLayerParams<Scalar>& p, const Vector<Scalar>& input,
                                const LstmCellState<Scalar>& state, LstmStepCache<Scalar>* cache = nullptr) {
  require_shape(input.size() == p.input_dim(), "lstm_step: input length " + std::to_string(input.size()) +
                                                   " != input_dim " + std::to_string(p.input_dim()));
  detail::check_state(p, state);
  Vector<Scalar> a = p.bias;
  a.noalias() += p.input_weights * input;
  a.noalias() += p.recurrent_weights * state.memory;
  if (cache) cache->input = input;
  return detail::lstm_cell_update(p, a, state, cache);
}

template <typename Scalar>
struct LstmStepGrads {
  Vector<Scalar> input;
  LstmCellState<Scalar> prev;
};

/// Reverse of lstm_step. `grad_memory` is the total gradient reaching the new
/// memory (layer output plus recurrent path); `grad_cell` the gradient on the
/// new cell. Parameter gradients are accumulated into `grads`.
template <typename Scalar>
LstmStepGrads<Scalar> lstm_step_backward(const LstmLayerParams<Scalar>& p, const LstmStepCache<Scalar>& cache,
                                         const Vector<Scalar>& grad_memory, const Vector<Scalar>& grad_cell,
                                         LstmLayerParams<Scalar>& grads) {
  if (cache.empty()) throw ContractViolation("lstm_step_backward: no cached forward activations");
  const Index h = p.hidden_dim();
  require_shape(grad_memory.size() == p.proj_dim() && grad_cell.size() == h,
                "lstm_step_backward: gradient dims do not match layer");

  grads.projection.noalias() += grad_memory * cache.hidden.transpose();
  const Vector<Scalar> d_hidden = p.projection.transpose() * grad_memory;

  const auto& o = cache.out_gate;
  const auto& i = cache.in_gate;
  const auto& f = cache.forget_gate;
  const auto& g = cache.candidate;
  const auto& tc = cache.tanh_cell;

  const Vector<Scalar> d_cell =
      grad_cell + (d_hidden.array() * o.array() * (Scalar(1) - tc.array().square())).matrix();

  Vector<Scalar> da(4 * h);
  da.segment(0, h) = (d_cell.array() * g.array() * i.array() * (Scalar(1) - i.array())).matrix();
  da.segment(h, h) =
      (d_cell.array() * cache.prev.cell.array() * f.array() * (Scalar(1) - f.array())).matrix();
  da.segment(2 * h, h) = (d_cell.array() * i.array() * (Scalar(1) - g.array().square())).matrix();
  da.segment(3 * h, h) = (d_hidden.array() * tc.array() * o.array() * (Scalar(1) - o.array())).matrix();

  grads.input_weights.noalias() += da * cache.input.transpose();
  grads.recurrent_weights.noalias() += da * cache.prev.memory.transpose();
  grads.bias += da;

  LstmStepGrads<Scalar> out;
  out.input.noalias() = p.input_weights.transpose() * da;
  out.prev.memory.noalias() = p.recurrent_weights.transpose() * da;
  out.prev.cell = d_cell.cwiseProduct(f);
  return out;
}

// Whole-sequence helpers. Rows of `inputs` are time steps. The input projection
// is computed for all steps at once; the recurrence is identical to lstm_step.

template <typename Scalar>
struct LstmSequenceCache {
  std::vector<LstmStepCache<Scalar>> steps;
};

template <typename Scalar>
Matrix<Scalar> lstm_sequence_forward(const LstmLayerParams<Scalar>& p, const Matrix<Scalar>& inputs,
                                     LstmCellState<Scalar>& state, LstmSequenceCache<Scalar>* cache = nullptr) {
  require_shape(inputs.rows() == 0 || inputs.cols() == p.input_dim(), "lstm_sequence_forward: input width mismatch");
  detail::check_state(p, state);
  const Index steps = inputs.rows();
  Matrix<Scalar> outputs(steps, p.proj_dim());
  if (cache) cache->steps.assign(static_cast<size_t>(steps), {});
  if (steps == 0) return outputs;

  Matrix<Scalar> pre = inputs * p.input_weights.transpose();
  pre.rowwise() += p.bias.transpose();
  for (Index t = 0; t < steps; ++t) {
    Vector<Scalar> a = pre.row(t).transpose();
    a.noalias() += p.recurrent_weights * state.memory;
    LstmStepCache<Scalar>* step_cache = cache ? &cache->steps[static_cast<size_t>(t)] : nullptr;
    if (step_cache) step_cache->input = inputs.row(t).transpose();
    state = detail::lstm_cell_update(p, a, state, step_cache);
    outputs.row(t) = state.memory.transpose();
  }
  return outputs;
}

/// Reverse of lstm_sequence_forward. `grad_final` carries the gradient on the
/// state left after the last step and is overwritten with the gradient on the
/// initial state. Returns gradients on the input rows.
template <typename Scalar>
Matrix<Scalar> lstm_sequence_backward(const LstmLayerParams<Scalar>& p, const LstmSequenceCache<Scalar>& cache,
                                      const Matrix<Scalar>& grad_outputs, LstmCellState<Scalar>& grad_final,
                                      LstmLayerParams<Scalar>& grads) {
  const auto steps = static_cast<Index>(cache.steps.size());
  require_shape(grad_outputs.rows() == steps && (steps == 0 || grad_outputs.cols() == p.proj_dim()),
                "lstm_sequence_backward: grad_outputs shape mismatch");
  Matrix<Scalar> grad_inputs(steps, p.input_dim());
  for (Index t = steps - 1; t >= 0; --t) {
    const Vector<Scalar> gm = grad_outputs.row(t).transpose() + grad_final.memory;
    LstmStepGrads<Scalar> g = lstm_step_backward(p, cache.steps[static_cast<size_t>(t)], gm, grad_final.cell, grads);
    grad_inputs.row(t) = g.input.transpose();
    grad_final = std::move(g.prev);
  }
  return grad_inputs;
}

// ---------------------------------------------------------------------------
// Feed-forward maps and softmax.
// ---------------------------------------------------------------------------

template <typename Scalar>
Vector<Scalar> ffn_linear_forward(const Matrix<Scalar>& weights, const Vector<Scalar>& bias,
                                  const Vector<Scalar>& input) {
  require_shape(weights.cols() == input.size() && weights.rows() == bias.size(), "ffn: shape mismatch");
  Vector<Scalar> out = bias;
  out.noalias() += weights * input;
  return out;
}

template <typename Scalar>
Vector<Scalar> ffn_tanh_forward(const Matrix<Scalar>& weights, const Vector<Scalar>& bias,
                                const Vector<Scalar>& input) {
  return ffn_linear_forward(weights, bias, input).array().tanh();
}

template <typename Derived>
auto log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw ContractViolation("log_sum_exp: empty input");
  const Scalar m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

template <typename Derived>
Vector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() == 0) throw ContractViolation("log_softmax: empty input");
  const Scalar m = logits.maxCoeff();
  const auto shifted = (logits.array() - m).eval();
  return (shifted - std::log(shifted.exp().sum())).matrix();
}

/// log(exp(a) + exp(b)) with -inf handled.
template <typename Scalar>
Scalar log_add(Scalar a, Scalar b) {
  if (a == -std::numeric_limits<Scalar>::infinity()) return b;
  if (b == -std::numeric_limits<Scalar>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// ---------------------------------------------------------------------------
// Optimisation.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AdamState {
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  long step = 0;
  std::vector<Vector<Scalar>> first_moment;
  std::vector<Vector<Scalar>> second_moment;
};

/// Bias-corrected Adam update. Moments are allocated on the first call.
template <typename Scalar>
void adam_step(const std::vector<ParamView<Scalar>>& params, const std::vector<ParamView<Scalar>>& grads,
               AdamState<Scalar>& state) {
  require_shape(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Vector<Scalar>::Zero(static_cast<Index>(p.values.size())));
      state.second_moment.push_back(Vector<Scalar>::Zero(static_cast<Index>(p.values.size())));
    }
  }
  require_shape(state.first_moment.size() == params.size(), "adam_step: optimizer state does not match parameters");
  ++state.step;
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, Scalar(state.step));
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, Scalar(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    require_shape(params[k].values.size() == grads[k].values.size() &&
                      static_cast<Index>(params[k].values.size()) == state.first_moment[k].size(),
                  "adam_step: shape mismatch on " + params[k].name);
    Eigen::Map<Vector<Scalar>> x(params[k].values.data(), static_cast<Index>(params[k].values.size()));
    Eigen::Map<const Vector<Scalar>> g(grads[k].values.data(), static_cast<Index>(grads[k].values.size()));
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    m = state.beta1 * m + (Scalar(1) - state.beta1) * g;
    v = state.beta2 * v + (Scalar(1) - state.beta2) * g.cwiseProduct(g);
    x.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

template <typename Scalar>
Scalar global_norm(const std::vector<ParamView<Scalar>>& grads) {
  Scalar sq = 0;
  for (const auto& g : grads)
    for (Scalar x : g.values) sq += x * x;
  return std::sqrt(sq);
}

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping. max_norm <= 0 disables clipping.
template <typename Scalar>
Scalar clip_global_norm(const std::vector<ParamView<Scalar>>& grads, Scalar max_norm) {
  const Scalar norm = global_norm(grads);
  if (max_norm > 0 && norm > max_norm) {
    const Scalar s = max_norm / norm;
    for (const auto& g : grads)
      for (Scalar& x : g.values) x *= s;
  }
  return norm;
}

}  // namespace rnnt
