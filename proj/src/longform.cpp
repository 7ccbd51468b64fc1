#include "rnnt/longform.hpp"

#include <spdlog/spdlog.h>

namespace rnnt {

std::string to_string(StateKind kind) {
  switch (kind) {
    case StateKind::zero: return "zero";
    case StateKind::rss: return "rss";
    case StateKind::rss_encoder_only: return "rss_encoder_only";
    case StateKind::rsp: return "rsp";
  }
  return "?";
}

StateKind state_kind_from_string(const std::string& s) {
  if (s == "zero") return StateKind::zero;
  if (s == "rss" || s == "rss_full") return StateKind::rss;
  if (s == "rss_encoder_only" || s == "rss-encoder-only") return StateKind::rss_encoder_only;
  if (s == "rsp") return StateKind::rsp;
  throw std::invalid_argument("unknown state strategy '" + s + "'");
}

StatePool::StatePool(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("StatePool: capacity must be >= 1");
}

bool StatePool::deposit(const RecurrentState& state, long step) {
  if (!state.all_finite()) {
    ++rejected_;
    spdlog::warn("state pool: rejected non-finite state from step {}", step);
    return false;
  }
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back({state, step});
  return true;
}

const PoolEntry& StatePool::draw(std::mt19937_64& rng) const {
  if (entries_.empty()) throw ContractViolation("StatePool::draw: pool is empty");
  std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
  return entries_[pick(rng)];
}

namespace {

void sample_normal(std::vector<CellState>& layers, std::mt19937_64& rng) {
  std::normal_distribution<Real> n(0.0, 1.0);
  for (auto& s : layers) {
    for (Index i = 0; i < s.cell.size(); ++i) s.cell(i) = n(rng);
    for (Index i = 0; i < s.memory.size(); ++i) s.memory(i) = n(rng);
  }
}

}  // namespace

InitialState initial_state(const StateStrategy& strategy, const ModelConfig& config, const StatePool& pool,
                           std::mt19937_64& rng) {
  InitialState out;
  out.state = RecurrentState::zero(config);
  switch (strategy.kind) {
    case StateKind::zero:
      break;
    case StateKind::rss:
      sample_normal(out.state.encoder, rng);
      sample_normal(out.state.prediction, rng);
      break;
    case StateKind::rss_encoder_only:
      sample_normal(out.state.encoder, rng);
      break;
    case StateKind::rsp: {
      std::bernoulli_distribution coin(strategy.pass_probability);
      if (!coin(rng)) break;
      if (pool.empty()) {
        out.fell_back = true;
        spdlog::debug("rsp: pool empty, using zero state");
        break;
      }
      const PoolEntry& e = pool.draw(rng);
      out.state = e.state;
      out.passed = true;
      out.source_step = e.step;
      break;
    }
  }
  return out;
}

RecurrentState inference_state(const StateStrategy&, const ModelConfig& config) {
  return RecurrentState::zero(config);
}

std::size_t deposit_final_states(StatePool& pool, const std::vector<RecurrentState>& finals, long step) {
  std::size_t accepted = 0;
  for (const auto& s : finals) accepted += pool.deposit(s, step) ? 1 : 0;
  return accepted;
}

}  // namespace rnnt
