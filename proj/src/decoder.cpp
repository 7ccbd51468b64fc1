#include "rnnt/decoder.hpp"

#include "rnnt/loss.hpp"

#include <algorithm>
#include <map>

namespace rnnt {

namespace {

struct Candidate {
  Real score;
  bool blank;
  const Hypothesis* parent;
  Token label;
};

// Score descending, blank first, then label sequences in lexicographic order.
bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.blank != b.blank) return a.blank;
  if (a.parent != b.parent) {
    if (a.parent->tokens != b.parent->tokens) return a.parent->tokens < b.parent->tokens;
  }
  return a.label < b.label;
}

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

/// Adds `h` to `set`, merging with an existing entry for the same labels. The
/// surviving state fields come from the more probable branch.
void merge_into(std::map<TokenSequence, Hypothesis>& set, Hypothesis h) {
  auto it = set.find(h.tokens);
  if (it == set.end()) {
    set.emplace(h.tokens, std::move(h));
    return;
  }
  const Real total = log_add(it->second.log_prob, h.log_prob);
  if (h.log_prob > it->second.log_prob) it->second = std::move(h);
  it->second.log_prob = total;
}

/// Keeps the `width` best entries scoring within `margin` of the best.
void prune(std::map<TokenSequence, Hypothesis>& set, size_t width, Real margin) {
  if (set.empty()) return;
  std::vector<const Hypothesis*> order;
  order.reserve(set.size());
  for (const auto& [tokens, h] : set) order.push_back(&h);
  std::sort(order.begin(), order.end(), [](const Hypothesis* a, const Hypothesis* b) { return hypothesis_before(*a, *b); });
  const Real best = order.front()->log_prob;
  std::vector<TokenSequence> drop;
  for (size_t i = 0; i < order.size(); ++i)
    if (i >= width || order[i]->log_prob < best - margin) drop.push_back(order[i]->tokens);
  for (const auto& t : drop) set.erase(t);
}

Token argmax_symbol(const Vec& logp, Token blank) {
  Token best = blank;
  for (Token k = 0; k < blank; ++k)
    if (logp(k) > logp(best)) best = k;
  return best;
}

}  // namespace

Beam initial_beam(const Model& model, const RecurrentState& state) {
  Hypothesis h;
  h.pred_before = state.prediction;
  h.pred_after = state.prediction;
  h.last_token = state.last_token;
  h.pred_row = predict_step(model.config, model.params, h.last_token, h.pred_after);
  Beam b;
  b.hypotheses.push_back(std::move(h));
  return b;
}

Beam decode_step(const Model& model, const Vec& enc_frame, const Beam& beam, const DecodeOptions& options,
                 DecodeStats* stats) {
  if (beam.hypotheses.empty()) throw ContractViolation("decode_step: empty beam");
  const Token blank = model.config.blank_id();
  const auto width = static_cast<size_t>(std::max<Index>(options.beam_width, 1));

  std::map<size_t, std::map<TokenSequence, Hypothesis>> levels;
  for (const auto& h : beam.hypotheses) {
    Hypothesis copy = h;
    copy.frame_emissions = 0;
    auto& level = levels[copy.tokens.size()];
    merge_into(level, std::move(copy));
  }
  std::map<TokenSequence, Hypothesis> next;

  auto live_count = [&] {
    size_t n = next.size();
    for (const auto& [len, set] : levels) n += set.size();
    return static_cast<Index>(n);
  };

  while (!levels.empty()) {
    if (stats) stats->peak_hypotheses = std::max(stats->peak_hypotheses, live_count());
    auto node = levels.extract(levels.begin());
    const size_t length = node.key();
    auto& level = node.mapped();

    std::vector<Vec> log_probs;
    log_probs.reserve(level.size());
    std::vector<Candidate> cands;
    for (auto& [tokens, h] : level) {
      log_probs.push_back(log_softmax(joint(model.config, model.params, enc_frame, h.pred_row)));
      const Vec& lp = log_probs.back();
      cands.push_back({h.log_prob + lp(blank), true, &h, blank});
      if (h.frame_emissions >= options.expansion_cap) {
        if (stats && argmax_symbol(lp, blank) != blank) ++stats->forced_terminations;
        continue;
      }
      for (Token k = 0; k < blank; ++k) cands.push_back({h.log_prob + lp(k), false, &h, k});
    }
    std::sort(cands.begin(), cands.end(), candidate_before);

    const Real best = cands.front().score;
    for (size_t i = 0; i < cands.size() && i < width; ++i) {
      const Candidate& c = cands[i];
      if (c.score < best - options.adaptive_margin) break;
      if (c.blank) {
        Hypothesis h = *c.parent;
        h.log_prob = c.score;
        merge_into(next, std::move(h));
      } else {
        Hypothesis h;
        h.tokens = c.parent->tokens;
        h.tokens.push_back(c.label);
        h.log_prob = c.score;
        h.pred_before = c.parent->pred_after;
        h.pred_after = c.parent->pred_after;
        h.last_token = c.label;
        h.pred_row = predict_step(model.config, model.params, c.label, h.pred_after);
        h.frame_emissions = c.parent->frame_emissions + 1;
        merge_into(levels[length + 1], std::move(h));
      }
    }
    if (stats) stats->peak_hypotheses = std::max(stats->peak_hypotheses, live_count() + static_cast<Index>(level.size()));
    // Sequences of this length receive no more blank mass, so the outgoing
    // beam can be cut to size now.
    prune(next, width, options.adaptive_margin);
  }

  Beam out;
  out.hypotheses.reserve(next.size());
  for (auto& [tokens, h] : next) out.hypotheses.push_back(std::move(h));
  std::sort(out.hypotheses.begin(), out.hypotheses.end(), hypothesis_before);
  if (stats) ++stats->encoder_frames;
  return out;
}

DecodeResult decode_utterance(const Model& model, const Mat& features, const RecurrentState& init_state,
                              const DecodeOptions& options) {
  DecodeResult r;
  EncoderStream stream(model.config, model.params, init_state.encoder);
  Beam beam = initial_beam(model, init_state);
  for (Index t = 0; t < features.rows(); ++t) {
    if (auto frame = stream.push(features.row(t).transpose())) beam = decode_step(model, *frame, beam, options, &r.stats);
  }
  const Hypothesis& best = beam.hypotheses.front();
  r.tokens = best.tokens;
  r.log_prob = best.log_prob;
  r.final_state.encoder = stream.state();
  r.final_state.prediction = best.pred_before;
  r.final_state.last_token = best.last_token;
  return r;
}

DecodeResult greedy_decode(const Model& model, const Mat& features, const RecurrentState& init_state,
                           int expansion_cap) {
  const Token blank = model.config.blank_id();
  DecodeResult r;
  EncoderStream stream(model.config, model.params, init_state.encoder);
  std::vector<CellState> before = init_state.prediction;
  std::vector<CellState> after = init_state.prediction;
  Token last = init_state.last_token;
  Vec row = predict_step(model.config, model.params, last, after);
  for (Index t = 0; t < features.rows(); ++t) {
    auto frame = stream.push(features.row(t).transpose());
    if (!frame) continue;
    ++r.stats.encoder_frames;
    r.stats.peak_hypotheses = 1;
    for (int emitted = 0;; ++emitted) {
      const Vec lp = log_softmax(joint(model.config, model.params, *frame, row));
      const Token k = argmax_symbol(lp, blank);
      if (k == blank || emitted >= expansion_cap) {
        if (k != blank) ++r.stats.forced_terminations;
        r.log_prob += lp(blank);
        break;
      }
      r.log_prob += lp(k);
      r.tokens.push_back(k);
      before = after;
      last = k;
      row = predict_step(model.config, model.params, k, after);
    }
  }
  r.final_state.encoder = stream.state();
  r.final_state.prediction = std::move(before);
  r.final_state.last_token = last;
  return r;
}

DecodeResult oracle_decode(const Model& model, const Mat& features, Index max_labels,
                           const RecurrentState& init_state) {
  const Index vocab = model.config.vocab_size;
  Index total = 0;
  Index level = 1;
  for (Index u = 0; u <= max_labels; ++u) {
    total += level;
    if (total > kMaxOracleSequences) throw ContractViolation("oracle_decode: search space exceeds the oracle cap");
    level *= vocab;
  }

  DecodeResult best;
  best.log_prob = -std::numeric_limits<Real>::infinity();
  TokenSequence y;
  for (Index u = 0; u <= max_labels; ++u) {
    y.assign(static_cast<size_t>(u), 0);
    while (true) {
      const ForwardResult f = forward_lattice(model.config, model.params, features, y, init_state);
      const Real ll = rnnt_forward(f.lattice, y, model.config.blank_id()).log_likelihood;
      if (ll > best.log_prob) {
        best.log_prob = ll;
        best.tokens = y;
        best.final_state = f.final_state;
      }
      // Odometer increment over the label alphabet.
      Index pos = u - 1;
      while (pos >= 0 && y[static_cast<size_t>(pos)] == vocab - 1) y[static_cast<size_t>(pos--)] = 0;
      if (pos < 0) break;
      ++y[static_cast<size_t>(pos)];
    }
  }
  return best;
}

}  // namespace rnnt
