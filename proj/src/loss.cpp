#include "rnnt/loss.hpp"

#include <bit>
#include <limits>

namespace rnnt {

namespace {

constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

void check_lattice(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id) {
  if (lattice.frames == 0)
    throw ImpossibleAlignment("rnnt_forward: no encoder frames for " + std::to_string(tokens.size()) + " labels");
  if (lattice.labels != static_cast<Index>(tokens.size()))
    throw ContractViolation("rnnt_forward: lattice built for a different label count");
  if (lattice.logits.rows() != lattice.frames * (lattice.labels + 1) || lattice.logits.cols() <= blank_id)
    throw ContractViolation("rnnt_forward: logits do not match lattice dims");
  if (!lattice.logits.allFinite()) throw ContractViolation("rnnt_forward: non-finite logits");
  for (Token y : tokens)
    if (y < 0 || y >= lattice.logits.cols() || y == blank_id)
      throw ContractViolation("rnnt_forward: invalid label " + std::to_string(y));
}

}  // namespace

LatticeDP rnnt_forward(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id) {
  check_lattice(lattice, tokens, blank_id);
  const Index T = lattice.frames;
  const Index U = lattice.labels;

  LatticeDP dp;
  dp.log_probs.resize(lattice.logits.rows(), lattice.logits.cols());
  for (Index r = 0; r < lattice.logits.rows(); ++r) dp.log_probs.row(r) = log_softmax(lattice.logits.row(r).transpose()).transpose();

  auto blank = [&](Index t, Index u) { return dp.log_probs(lattice.row(t, u), blank_id); };
  auto label = [&](Index t, Index u) { return dp.log_probs(lattice.row(t, u), tokens[static_cast<size_t>(u)]); };

  dp.alpha = Mat::Constant(T, U + 1, kNegInf);
  dp.alpha(0, 0) = 0;
  for (Index t = 0; t < T; ++t) {
    for (Index u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      Real v = kNegInf;
      if (t > 0) v = dp.alpha(t - 1, u) + blank(t - 1, u);
      if (u > 0) v = log_add(v, dp.alpha(t, u - 1) + label(t, u - 1));
      dp.alpha(t, u) = v;
    }
  }

  dp.beta = Mat::Constant(T, U + 1, kNegInf);
  dp.beta(T - 1, U) = blank(T - 1, U);
  for (Index t = T - 1; t >= 0; --t) {
    for (Index u = U; u >= 0; --u) {
      if (t == T - 1 && u == U) continue;
      Real v = kNegInf;
      if (t < T - 1) v = dp.beta(t + 1, u) + blank(t, u);
      if (u < U) v = log_add(v, dp.beta(t, u + 1) + label(t, u));
      dp.beta(t, u) = v;
    }
  }

  dp.log_likelihood = dp.alpha(T - 1, U) + blank(T - 1, U);
  return dp;
}

Mat rnnt_grad_logits(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id, const LatticeDP& dp) {
  check_lattice(lattice, tokens, blank_id);
  const Index T = lattice.frames;
  const Index U = lattice.labels;
  if (dp.alpha.rows() != T || dp.alpha.cols() != U + 1 || dp.log_probs.rows() != lattice.logits.rows())
    throw ContractViolation("rnnt_grad_logits: dp does not belong to this lattice");

  const Real ll = dp.log_likelihood;
  Mat grad(lattice.logits.rows(), lattice.logits.cols());
  for (Index t = 0; t < T; ++t) {
    for (Index u = 0; u <= U; ++u) {
      const Index r = lattice.row(t, u);
      // Occupancy of the cell; the softmax term is scaled by it.
      const Real occupancy = std::exp(dp.alpha(t, u) + dp.beta(t, u) - ll);
      grad.row(r) = dp.log_probs.row(r).array().exp() * occupancy;
      const Real next_blank = t + 1 < T ? dp.beta(t + 1, u) : (u == U ? 0.0 : kNegInf);
      grad(r, blank_id) -= std::exp(dp.alpha(t, u) + dp.log_probs(r, blank_id) + next_blank - ll);
      if (u < U) {
        const Token y = tokens[static_cast<size_t>(u)];
        grad(r, y) -= std::exp(dp.alpha(t, u) + dp.log_probs(r, y) + dp.beta(t, u + 1) - ll);
      }
    }
  }
  return grad;
}

std::vector<AlignmentPath> enumerate_alignments(Index frames, Index labels) {
  if (frames < 1 || labels < 0) throw ContractViolation("enumerate_alignments: need T' >= 1 and U >= 0");
  if (frames + labels > kMaxEnumeratedAlignmentLength)
    throw ContractViolation("enumerate_alignments: T'+U exceeds the oracle size cap");
  // Choose label positions among the first T'+U-1 symbols; the last is blank.
  const Index free = frames + labels - 1;
  std::vector<AlignmentPath> out;
  for (unsigned mask = 0; mask < (1u << free); ++mask) {
    if (std::popcount(mask) != labels) continue;
    AlignmentPath path(static_cast<size_t>(frames + labels), false);
    for (Index i = 0; i < free; ++i) path[static_cast<size_t>(i)] = (mask >> i) & 1u;
    out.push_back(std::move(path));
  }
  return out;
}

Real alignment_log_prob(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id,
                        const AlignmentPath& path) {
  Index t = 0;
  Index u = 0;
  Real lp = 0;
  for (bool emit : path) {
    if (t >= lattice.frames) throw ContractViolation("alignment_log_prob: path runs past the last frame");
    const Vec cell = log_softmax(lattice.logits.row(lattice.row(t, u)).transpose());
    if (emit) {
      lp += cell(tokens.at(static_cast<size_t>(u)));
      ++u;
    } else {
      lp += cell(blank_id);
      ++t;
    }
  }
  if (t != lattice.frames || u != lattice.labels) throw ContractViolation("alignment_log_prob: incomplete path");
  return lp;
}

Real enumerated_loss(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id) {
  Real total = kNegInf;
  for (const auto& path : enumerate_alignments(lattice.frames, lattice.labels))
    total = log_add(total, alignment_log_prob(lattice, tokens, blank_id, path));
  return -total;
}

}  // namespace rnnt
