#pragma once

// Alignment-marginalised transducer loss by forward-backward over the
// T' x (U+1) lattice, its gradient with respect to the joint logits, and a
// brute-force alignment enumerator used as a test oracle.

#include "rnnt/model.hpp"

namespace rnnt {

class ImpossibleAlignment : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct LatticeDP {
  Mat log_probs;  // log-softmax of every lattice cell, same layout as the logits
  Mat alpha;      // T' x (U+1)
  Mat beta;       // T' x (U+1)
  Real log_likelihood = 0;

  Real loss() const { return -log_likelihood; }
};

/// Forward and backward variables in the log domain:
///   alpha(t,u) = logadd(alpha(t-1,u) + blank(t-1,u), alpha(t,u-1) + label(t,u-1))
///   beta(t,u)  = logadd(beta(t+1,u) + blank(t,u),    beta(t,u+1) + label(t,u))
/// with alpha(0,0) = 0 and beta(T'-1,U) = blank(T'-1,U).
LatticeDP rnnt_forward(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id);

/// d(-log P(y|x)) / d logits, laid out like lattice.logits.
Mat rnnt_grad_logits(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id, const LatticeDP& dp);

/// One alignment as a sequence of symbols: true = label emission, false = blank.
using AlignmentPath = std::vector<bool>;

constexpr Index kMaxEnumeratedAlignmentLength = 12;

/// Every alignment of U labels over T' frames: interleavings with exactly T'
/// blanks whose final symbol is the blank that leaves the last frame.
std::vector<AlignmentPath> enumerate_alignments(Index frames, Index labels);

/// Log-probability of one alignment path.
Real alignment_log_prob(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id,
                        const AlignmentPath& path);

/// -log sum over enumerate_alignments; oracle for rnnt_forward.
Real enumerated_loss(const LogitLattice& lattice, const TokenSequence& tokens, Token blank_id);

}  // namespace rnnt
