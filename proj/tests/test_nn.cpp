#include "rnnt/nn.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace rnnt;
using namespace rnnt::testing;

namespace {

using Layer = LstmLayerParams<Real>;
using State = LstmCellState<Real>;

Layer random_layer(Index in, Index h, Index p, std::mt19937_64& rng) {
  Layer l = Layer::zeros(in, h, p);
  l.input_weights = random_matrix(4 * h, in, rng, 0.7);
  l.recurrent_weights = random_matrix(4 * h, p, rng, 0.7);
  l.bias = random_vector(4 * h, rng, 0.5);
  l.projection = random_matrix(p, h, rng, 0.7);
  return l;
}

State random_cell_state(const Layer& l, std::mt19937_64& rng) {
  return {random_vector(l.hidden_dim(), rng, 0.5), random_vector(l.proj_dim(), rng, 0.5)};
}

}  // namespace

TEST(Lstm, ZeroWeightsGiveZeroOutput) {
  Layer l = Layer::zeros(3, 4, 2);
  l.bias.segment(4, 4).setOnes();
  std::mt19937_64 rng(1);
  const State s = lstm_step(l, random_vector(3, rng), State::zeros_like(l));
  EXPECT_TRUE(s.memory.isZero(0));
  EXPECT_TRUE(s.cell.isZero(0));
}

TEST(Lstm, InitialisationMatchesConvention) {
  std::mt19937_64 rng(2);
  const Layer l = Layer::random(5, 4, 3, rng);
  EXPECT_TRUE(l.bias.segment(4, 4).isOnes(0));
  EXPECT_TRUE(l.bias.segment(0, 4).isZero(0));
  const Real r = 1 / std::sqrt(8.0);
  EXPECT_LE(l.input_weights.cwiseAbs().maxCoeff(), r);
  EXPECT_LE(l.recurrent_weights.cwiseAbs().maxCoeff(), r);
  EXPECT_LE(l.projection.cwiseAbs().maxCoeff(), 0.5);
}

TEST(Lstm, ScalarCellByHand) {
  Layer l = Layer::zeros(1, 1, 1);
  // gates: input, forget, candidate, output
  l.input_weights << 0.5, -0.3, 0.8, 0.2;
  l.recurrent_weights << 0.1, 0.2, -0.4, 0.3;
  l.bias << 0.1, 1.0, 0.0, -0.2;
  l.projection << 1.5;
  State s{Vec(Vec::Constant(1, 0.25)), Vec(Vec::Constant(1, -0.5))};
  const State out = lstm_step(l, Vec(Vec::Constant(1, 1.0)), s);

  auto sig = [](long double x) { return 1.0L / (1.0L + std::exp(-x)); };
  const long double i = sig(0.5L - 0.05L + 0.1L);
  const long double f = sig(-0.3L - 0.1L + 1.0L);
  const long double g = std::tanh(0.8L + 0.2L);
  const long double o = sig(0.2L - 0.15L - 0.2L);
  const long double c = f * 0.25L + i * g;
  const long double m = 1.5L * o * std::tanh(c);
  EXPECT_NEAR(out.cell(0), static_cast<Real>(c), 1e-12);
  EXPECT_NEAR(out.memory(0), static_cast<Real>(m), 1e-12);
}

TEST(Lstm, ContractiveRecurrenceConverges) {
  std::mt19937_64 rng(3);
  Layer l = random_layer(2, 3, 2, rng);
  l.recurrent_weights *= 0.05;
  l.bias.segment(3, 3).setConstant(-2.0);  // small forget gate
  const Vec x = random_vector(2, rng);
  State s = State::zeros_like(l);
  Real prev_gap = std::numeric_limits<Real>::infinity();
  for (int n = 0; n < 30; ++n) {
    const State next = lstm_step(l, x, s);
    const Real gap = std::sqrt((next.cell - s.cell).squaredNorm() + (next.memory - s.memory).squaredNorm());
    if (n > 0 && prev_gap > 0) {
      EXPECT_LT(gap, prev_gap) << "iteration " << n;
    }
    prev_gap = gap;
    s = next;
  }
  EXPECT_LT(prev_gap, 1e-10);
}

TEST(Lstm, ShapeErrors) {
  const Layer l = Layer::zeros(3, 2, 2);
  EXPECT_THROW(lstm_step(l, Vec(Vec::Zero(2)), State::zeros_like(l)), ShapeError);
  EXPECT_THROW(lstm_step(l, Vec(Vec::Zero(3)), State::zeros(3, 2)), ShapeError);
}

TEST(Lstm, BackwardWithoutCacheIsContractViolation) {
  const Layer l = Layer::zeros(2, 2, 2);
  Layer g = Layer::zeros(2, 2, 2);
  EXPECT_THROW(lstm_step_backward(l, LstmStepCache<Real>{}, Vec(Vec::Zero(2)), Vec(Vec::Zero(2)), g), ContractViolation);
}

TEST(Lstm, ZeroUpstreamGradientGivesZeroGradients) {
  std::mt19937_64 rng(4);
  const Layer l = random_layer(3, 2, 2, rng);
  LstmStepCache<Real> cache;
  lstm_step(l, random_vector(3, rng), random_cell_state(l, rng), &cache);
  Layer g = Layer::zeros(3, 2, 2);
  const auto out = lstm_step_backward(l, cache, Vec(Vec::Zero(2)), Vec(Vec::Zero(2)), g);
  EXPECT_TRUE(out.input.isZero(0));
  EXPECT_TRUE(out.prev.cell.isZero(0));
  EXPECT_TRUE(out.prev.memory.isZero(0));
  EXPECT_TRUE(g.input_weights.isZero(0) && g.recurrent_weights.isZero(0) && g.bias.isZero(0) &&
              g.projection.isZero(0));
}

// Loss = <wm, m_T> + <wc, c_T> over an unrolled chain of `steps` cells.
TEST(Lstm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int draw = 0; draw < 60; ++draw) {
    const Index in = uniform(1, 4, rng), h = uniform(1, 4, rng), p = uniform(1, 4, rng);
    const int steps = draw % 2 == 0 ? 1 : 2;
    Layer l = random_layer(in, h, p, rng);
    Mat xs = random_matrix(steps, in, rng);
    State s0 = random_cell_state(l, rng);
    const Vec wm = random_vector(p, rng), wc = random_vector(h, rng);

    auto loss = [&] {
      State s = s0;
      for (int t = 0; t < steps; ++t) s = lstm_step(l, Vec(xs.row(t).transpose()), s);
      return wm.dot(s.memory) + wc.dot(s.cell);
    };

    std::vector<LstmStepCache<Real>> caches(static_cast<size_t>(steps));
    State s = s0;
    for (int t = 0; t < steps; ++t) s = lstm_step(l, Vec(xs.row(t).transpose()), s, &caches[static_cast<size_t>(t)]);
    Layer grads = Layer::zeros(in, h, p);
    Mat grad_x(steps, in);
    Vec gm = wm, gc = wc;
    for (int t = steps - 1; t >= 0; --t) {
      auto g = lstm_step_backward(l, caches[static_cast<size_t>(t)], gm, gc, grads);
      grad_x.row(t) = g.input.transpose();
      gm = g.prev.memory;
      gc = g.prev.cell;
    }

    auto check = [&](Real* x, Real analytic, const std::string& what) {
      const Real numeric = central_difference(loss, x);
      EXPECT_LE(relative_error(analytic, numeric), 1e-6) << what << " draw " << draw;
      ++checked;
    };
    std::vector<ParamView<Real>> pv, gv;
    l.append_views("l", pv);
    grads.append_views("l", gv);
    for (size_t k = 0; k < pv.size(); ++k)
      for (size_t i = 0; i < pv[k].values.size(); ++i) check(&pv[k].values[i], gv[k].values[i], pv[k].name);
    for (Index i = 0; i < xs.size(); ++i) check(xs.data() + i, grad_x.data()[i], "input");
    for (Index i = 0; i < h; ++i) check(&s0.cell(i), gc(i), "prev cell");
    for (Index i = 0; i < p; ++i) check(&s0.memory(i), gm(i), "prev memory");
  }
  EXPECT_GT(checked, 1000);
}

TEST(Lstm, SequenceHelpersMatchStepwise) {
  std::mt19937_64 rng(6);
  const Layer l = random_layer(3, 4, 2, rng);
  const Mat xs = random_matrix(5, 3, rng);
  const State s0 = random_cell_state(l, rng);
  State a = s0;
  Mat out(5, 2);
  for (Index t = 0; t < 5; ++t) {
    a = lstm_step(l, Vec(xs.row(t).transpose()), a);
    out.row(t) = a.memory.transpose();
  }
  State b = s0;
  const Mat seq = lstm_sequence_forward(l, xs, b);
  EXPECT_LE((seq - out).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((a.cell - b.cell).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Ffn, TrivialCases) {
  const Vec b = (Vec(2) << 0.3, -0.7).finished();
  const Vec x = (Vec(2) << 1.5, -2.0).finished();
  EXPECT_EQ(ffn_linear_forward(Mat(Mat::Zero(2, 2)), b, x), b);
  EXPECT_EQ(ffn_tanh_forward(Mat(Mat::Zero(2, 2)), b, x), b.array().tanh().matrix());
  EXPECT_EQ(ffn_linear_forward(Mat(Mat::Identity(2, 2)), Vec(Vec::Zero(2)), x), x);
  EXPECT_EQ(ffn_tanh_forward(Mat(Mat::Identity(2, 2)), Vec(Vec::Zero(2)), x), x.array().tanh().matrix());
}

TEST(Ffn, TwoByTwoByHand) {
  Mat w(2, 2);
  w << 0.2, -0.4, 1.1, 0.3;
  const Vec b = (Vec(2) << 0.05, -0.1).finished();
  const Vec x = (Vec(2) << 0.7, -1.3).finished();
  const Real y0 = 0.2 * 0.7 + -0.4 * -1.3 + 0.05;
  const Real y1 = 1.1 * 0.7 + 0.3 * -1.3 - 0.1;
  const Vec lin = ffn_linear_forward(w, b, x);
  const Vec th = ffn_tanh_forward(w, b, x);
  EXPECT_NEAR(lin(0), y0, 1e-12);
  EXPECT_NEAR(lin(1), y1, 1e-12);
  EXPECT_NEAR(th(0), std::tanh(y0), 1e-12);
  EXPECT_NEAR(th(1), std::tanh(y1), 1e-12);
  EXPECT_THROW(ffn_linear_forward(w, b, Vec(Vec::Zero(3))), ShapeError);
}

TEST(LogSoftmax, Values) {
  const Vec a = log_softmax(Vec(Vec::Zero(2)));
  EXPECT_NEAR(a(0), -std::log(2.0), 1e-15);
  EXPECT_NEAR(a(1), -std::log(2.0), 1e-15);
  const Vec big = log_softmax(Vec(Vec::Constant(2, 1000.0)));
  EXPECT_NEAR(big(0), -std::log(2.0), 1e-15);
  EXPECT_NEAR(big(1), -std::log(2.0), 1e-15);

  const Vec v = log_softmax((Vec(3) << 1, 2, 3).finished());
  const long double z = std::log(std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(v(k), static_cast<Real>((k + 1) - z), 1e-12);
  EXPECT_THROW(log_softmax(Vec(0)), ContractViolation);
}

TEST(LogSoftmax, ExponentiatesToOne) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Vec v = log_softmax(random_vector(uniform(1, 20, rng), rng, 10.0));
    EXPECT_NEAR(v.array().exp().sum(), 1.0, 1e-12);
  }
}

TEST(LogAdd, HandlesNegativeInfinity) {
  const Real ninf = -std::numeric_limits<Real>::infinity();
  EXPECT_EQ(log_add(ninf, ninf), ninf);
  EXPECT_EQ(log_add(ninf, -3.0), -3.0);
  EXPECT_NEAR(log_add(std::log(0.25), std::log(0.5)), std::log(0.75), 1e-15);
}

namespace {

struct AdamFixture {
  Mat w;
  Mat g;
  std::vector<ParamView<Real>> pv, gv;
  explicit AdamFixture(Mat init) : w(std::move(init)), g(Mat::Zero(w.rows(), w.cols())) {
    pv = {make_view<Real>("w", w)};
    gv = {make_view<Real>("w", g)};
  }
};

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(8);
  AdamFixture f(random_matrix(3, 2, rng));
  const Mat before = f.w;
  AdamState<Real> s;
  for (int i = 0; i < 5; ++i) adam_step(f.pv, f.gv, s);
  EXPECT_EQ(f.w, before);
  EXPECT_EQ(s.step, 5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamFixture f(Mat::Zero(1, 4));
  f.g << 0.3, -2.0, 1e-3, 50.0;
  AdamState<Real> s;
  s.learning_rate = 0.01;
  adam_step(f.pv, f.gv, s);
  for (Index i = 0; i < 4; ++i) {
    // m_hat = g, v_hat = g^2 at t = 1
    const Real expected = -0.01 * f.g(i) / (std::abs(f.g(i)) + 1e-8);
    EXPECT_NEAR(f.w(i), expected, 1e-15);
    EXPECT_NEAR(std::abs(f.w(i)), 0.01, 1e-6);
  }
}

TEST(Adam, MomentsConvergeUnderConstantGradient) {
  AdamFixture f(Mat::Zero(1, 3));
  f.g << 0.5, -1.5, 2.0;
  AdamState<Real> s;
  for (int i = 0; i < 100; ++i) adam_step(f.pv, f.gv, s);
  for (Index i = 0; i < 3; ++i) {
    const Real m_hat = s.first_moment[0](i) / (1 - std::pow(s.beta1, 100));
    const Real v_hat = s.second_moment[0](i) / (1 - std::pow(s.beta2, 100));
    EXPECT_NEAR(m_hat, f.g(i), 0.01 * std::abs(f.g(i)));
    EXPECT_NEAR(v_hat, f.g(i) * f.g(i), 0.01 * f.g(i) * f.g(i));
  }
  // raw first moment is 1 - 0.9^100 of g, within 1% of g
  EXPECT_NEAR(s.first_moment[0](0), 0.5, 0.005);
}

TEST(Adam, ShapeMismatch) {
  AdamFixture f(Mat::Zero(2, 2));
  Mat other = Mat::Zero(3, 1);
  std::vector<ParamView<Real>> gv = {make_view<Real>("w", other)};
  AdamState<Real> s;
  EXPECT_THROW(adam_step(f.pv, gv, s), ShapeError);
}

TEST(Clip, GlobalNorm) {
  Mat a(1, 2), b(1, 1);
  a << 3, 0;
  b << 4;
  std::vector<ParamView<Real>> v = {make_view<Real>("a", a), make_view<Real>("b", b)};
  EXPECT_DOUBLE_EQ(clip_global_norm(v, 2.5), 5.0);
  EXPECT_NEAR(global_norm(v), 2.5, 1e-15);
  EXPECT_NEAR(a(0), 1.5, 1e-15);
  EXPECT_DOUBLE_EQ(clip_global_norm(v, 0.0), 2.5);
  EXPECT_NEAR(global_norm(v), 2.5, 1e-15);
}
