#pragma once

// Token error rate with deletion / insertion / substitution breakdown.

#include "rnnt/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace rnnt {

struct WerBreakdown {
  long ref_len = 0;
  long deletions = 0;
  long insertions = 0;
  long substitutions = 0;

  long errors() const { return deletions + insertions + substitutions; }
  /// Throws ContractViolation when ref_len == 0.
  Real wer() const;
  Real del_rate() const;
  Real ins_rate() const;
  Real sub_rate() const;
  WerBreakdown& operator+=(const WerBreakdown& o);
};

/// Minimum unit-cost alignment. Among optimal alignments the traceback prefers
/// substitution (or match), then deletion, then insertion.
WerBreakdown edit_align(const TokenSequence& ref, const TokenSequence& hyp);

/// Plain Levenshtein distance.
long edit_distance(const TokenSequence& a, const TokenSequence& b);

struct LengthBucket {
  long min_len = 0;  // inclusive
  long max_len = 0;  // inclusive
  long n_utts = 0;
  WerBreakdown counts;
};

struct CorpusWer {
  long n_utts = 0;
  WerBreakdown total;
  std::vector<LengthBucket> buckets;  // only non-empty buckets
};

using RefHyp = std::pair<TokenSequence, TokenSequence>;

/// Pooled counts over all pairs, and per reference-length bucket.
/// Bucket edges are inclusive lower bounds; the default gives
/// [1,4] [5,8] [9,16] [17,32] [33,64] [65,128] [129,inf).
CorpusWer corpus_wer(const std::vector<RefHyp>& pairs, const std::vector<long>& bucket_edges = {1, 5, 9, 17, 33, 65, 129});

/// CSV with header test_set,n_utts,ref_tokens,wer,del_rate,ins_rate,sub_rate;
/// bucket rows use test_set "<name>/len<min>-<max>".
void write_wer_csv_header(std::ostream& os);
void write_wer_csv_rows(std::ostream& os, const std::string& test_set, const CorpusWer& result);

/// "12.50 (10.00 / 1.25 / 1.25)" in percent.
std::string format_wer(const WerBreakdown& w);

}  // namespace rnnt
