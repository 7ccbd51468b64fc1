#pragma once

// Initial recurrent-state strategies for simulating long-form audio while
// training on short utterances: zero states, random state sampling from
// N(0, I), and random state passing from a pool of earlier final states.

#include "rnnt/model.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <random>

namespace rnnt {

enum class StateKind { zero, rss, rss_encoder_only, rsp };

std::string to_string(StateKind kind);
StateKind state_kind_from_string(const std::string& s);

struct StateStrategy {
  StateKind kind = StateKind::zero;
  Real pass_probability = 0.5;
  std::size_t pool_capacity = 1024;
};

struct PoolEntry {
  RecurrentState state;  // carries last_token
  long step = 0;         // training step that produced it
};

/// Bounded ring of detached final states. Entries are value copies.
class StatePool {
 public:
  explicit StatePool(std::size_t capacity = 1024);

  /// Returns false (and stores nothing) for non-finite states.
  bool deposit(const RecurrentState& state, long step);
  const PoolEntry& draw(std::mt19937_64& rng) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const std::deque<PoolEntry>& entries() const { return entries_; }
  std::size_t rejected() const { return rejected_; }
  void set_rejected(std::size_t n) { rejected_ = n; }  // checkpoint restore

 private:
  std::size_t capacity_;
  std::deque<PoolEntry> entries_;
  std::size_t rejected_ = 0;
};

struct InitialState {
  RecurrentState state;
  bool passed = false;               // rsp: a pool entry was used
  std::optional<long> source_step;   // rsp: step that produced the entry
  bool fell_back = false;            // rsp: coin said pass but the pool was empty
};

/// Training-time initial state for one utterance.
InitialState initial_state(const StateStrategy& strategy, const ModelConfig& config, const StatePool& pool,
                           std::mt19937_64& rng);

/// Inference always starts from the zero state, the mean of the training-time
/// distributions.
RecurrentState inference_state(const StateStrategy& strategy, const ModelConfig& config);

/// Deposits a batch of final states; returns how many were accepted.
std::size_t deposit_final_states(StatePool& pool, const std::vector<RecurrentState>& finals, long step);

}  // namespace rnnt
