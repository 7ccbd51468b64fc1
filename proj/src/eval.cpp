#include "rnnt/eval.hpp"

#include <fmt/format.h>

#include <limits>
#include <ostream>

namespace rnnt {

Real WerBreakdown::wer() const {
  if (ref_len <= 0) throw ContractViolation("WER undefined for an empty reference");
  return static_cast<Real>(errors()) / static_cast<Real>(ref_len);
}
Real WerBreakdown::del_rate() const {
  if (ref_len <= 0) throw ContractViolation("WER undefined for an empty reference");
  return static_cast<Real>(deletions) / static_cast<Real>(ref_len);
}
Real WerBreakdown::ins_rate() const {
  if (ref_len <= 0) throw ContractViolation("WER undefined for an empty reference");
  return static_cast<Real>(insertions) / static_cast<Real>(ref_len);
}
Real WerBreakdown::sub_rate() const {
  if (ref_len <= 0) throw ContractViolation("WER undefined for an empty reference");
  return static_cast<Real>(substitutions) / static_cast<Real>(ref_len);
}

WerBreakdown& WerBreakdown::operator+=(const WerBreakdown& o) {
  ref_len += o.ref_len;
  deletions += o.deletions;
  insertions += o.insertions;
  substitutions += o.substitutions;
  return *this;
}

namespace {

std::vector<long> cost_table(const TokenSequence& ref, const TokenSequence& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<long> d((n + 1) * (m + 1));
  auto at = [&](size_t i, size_t j) -> long& { return d[i * (m + 1) + j]; };
  for (size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<long>(i);
  for (size_t j = 0; j <= m; ++j) at(0, j) = static_cast<long>(j);
  for (size_t i = 1; i <= n; ++i)
    for (size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});
  return d;
}

}  // namespace

long edit_distance(const TokenSequence& a, const TokenSequence& b) { return cost_table(a, b).back(); }

WerBreakdown edit_align(const TokenSequence& ref, const TokenSequence& hyp) {
  const auto d = cost_table(ref, hyp);
  const size_t m = hyp.size();
  auto at = [&](size_t i, size_t j) { return d[i * (m + 1) + j]; };
  WerBreakdown w;
  w.ref_len = static_cast<long>(ref.size());
  size_t i = ref.size(), j = hyp.size();
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const long diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      if (diag == at(i, j)) {
        if (ref[i - 1] != hyp[j - 1]) ++w.substitutions;
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i - 1, j) + 1 == at(i, j)) {
      ++w.deletions;
      --i;
    } else {
      ++w.insertions;
      --j;
    }
  }
  return w;
}

CorpusWer corpus_wer(const std::vector<RefHyp>& pairs, const std::vector<long>& bucket_edges) {
  CorpusWer out;
  for (size_t b = 0; b < bucket_edges.size(); ++b) {
    LengthBucket bucket;
    bucket.min_len = bucket_edges[b];
    bucket.max_len = b + 1 < bucket_edges.size() ? bucket_edges[b + 1] - 1 : std::numeric_limits<long>::max();
    out.buckets.push_back(bucket);
  }
  for (const auto& [ref, hyp] : pairs) {
    const WerBreakdown w = edit_align(ref, hyp);
    out.total += w;
    ++out.n_utts;
    for (auto& b : out.buckets) {
      if (w.ref_len >= b.min_len && w.ref_len <= b.max_len) {
        b.counts += w;
        ++b.n_utts;
        break;
      }
    }
  }
  std::erase_if(out.buckets, [](const LengthBucket& b) { return b.n_utts == 0; });
  return out;
}

void write_wer_csv_header(std::ostream& os) { os << "test_set,n_utts,ref_tokens,wer,del_rate,ins_rate,sub_rate\n"; }

namespace {

void csv_row(std::ostream& os, const std::string& name, long n_utts, const WerBreakdown& w) {
  if (w.ref_len == 0) {
    os << fmt::format("{},{},0,nan,nan,nan,nan\n", name, n_utts);
    return;
  }
  os << fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", name, n_utts, w.ref_len, w.wer(), w.del_rate(),
                    w.ins_rate(), w.sub_rate());
}

}  // namespace

void write_wer_csv_rows(std::ostream& os, const std::string& test_set, const CorpusWer& result) {
  csv_row(os, test_set, result.n_utts, result.total);
  for (const auto& b : result.buckets) {
    const std::string hi = b.max_len == std::numeric_limits<long>::max() ? "inf" : std::to_string(b.max_len);
    csv_row(os, fmt::format("{}/len{}-{}", test_set, b.min_len, hi), b.n_utts, b.counts);
  }
}

std::string format_wer(const WerBreakdown& w) {
  if (w.ref_len == 0) return "n/a";
  return fmt::format("{:.2f} ({:.2f} / {:.2f} / {:.2f})", 100 * w.wer(), 100 * w.del_rate(), 100 * w.ins_rate(),
                     100 * w.sub_rate());
}

}  // namespace rnnt
