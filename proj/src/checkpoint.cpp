#include "rnnt/checkpoint.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace rnnt {

namespace {

using namespace binary;

constexpr char kMagic[4] = {'R', 'N', 'T', 'C'};

void write_reals(std::ostream& os, std::span<const Real> values) {
  write_u64(os, values.size());
  for (Real v : values) write_f64(os, v);
}

void read_reals(std::istream& is, std::span<Real> out) {
  const std::uint64_t n = read_u64(is);
  if (n != out.size()) throw FormatError(fmt::format("expected {} values, found {}", out.size(), n));
  for (Real& v : out) v = read_f64(is);
}

Vec read_vec(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  if (n > (1u << 28)) throw FormatError("implausible vector length");
  Vec v(static_cast<Index>(n));
  for (Index i = 0; i < v.size(); ++i) v(i) = read_f64(is);
  return v;
}

std::vector<std::pair<std::string, Index*>> config_fields(ModelConfig& c) {
  return {{"feature_dim", &c.feature_dim},
          {"encoder_layers", &c.encoder_layers},
          {"encoder_hidden", &c.encoder_hidden},
          {"encoder_proj", &c.encoder_proj},
          {"time_reduction_after", &c.time_reduction_after},
          {"time_reduction_factor", &c.time_reduction_factor},
          {"prediction_layers", &c.prediction_layers},
          {"prediction_hidden", &c.prediction_hidden},
          {"prediction_proj", &c.prediction_proj},
          {"embedding_dim", &c.embedding_dim},
          {"joint_dim", &c.joint_dim},
          {"vocab_size", &c.vocab_size}};
}

void write_cells(std::ostream& os, const std::vector<CellState>& cells) {
  write_u32(os, static_cast<std::uint32_t>(cells.size()));
  for (const auto& c : cells) {
    write_reals(os, {c.cell.data(), static_cast<size_t>(c.cell.size())});
    write_reals(os, {c.memory.data(), static_cast<size_t>(c.memory.size())});
  }
}

void read_cells(std::istream& is, std::vector<CellState>& cells) {
  if (read_u32(is) != cells.size()) throw FormatError("pool entry layer count mismatch");
  for (auto& c : cells) {
    read_reals(is, {c.cell.data(), static_cast<size_t>(c.cell.size())});
    read_reals(is, {c.memory.data(), static_cast<size_t>(c.memory.size())});
  }
}

}  // namespace

void write_checkpoint(std::ostream& os, const TrainerState& state) {
  os.write(kMagic, 4);
  write_u32(os, kCheckpointVersion);

  ModelConfig config = state.model.config;
  const auto fields = config_fields(config);
  write_u32(os, static_cast<std::uint32_t>(fields.size() + 1));
  for (const auto& [name, value] : fields) {
    write_string(os, name);
    write_string(os, std::to_string(*value));
  }
  write_string(os, "joint_mode");
  write_string(os, to_string(config.joint_mode));

  ModelParams params = state.model.params;
  const auto views = params.views();
  write_u32(os, static_cast<std::uint32_t>(views.size()));
  for (const auto& v : views) {
    write_string(os, v.name);
    write_u64(os, static_cast<std::uint64_t>(v.rows));
    write_u64(os, static_cast<std::uint64_t>(v.cols));
    write_reals(os, v.values);
  }

  const auto& adam = state.optimizer;
  write_f64(os, adam.learning_rate);
  write_f64(os, adam.beta1);
  write_f64(os, adam.beta2);
  write_f64(os, adam.epsilon);
  write_u64(os, static_cast<std::uint64_t>(adam.step));
  write_u32(os, static_cast<std::uint32_t>(adam.first_moment.size()));
  for (size_t i = 0; i < adam.first_moment.size(); ++i) {
    write_reals(os, {adam.first_moment[i].data(), static_cast<size_t>(adam.first_moment[i].size())});
    write_reals(os, {adam.second_moment[i].data(), static_cast<size_t>(adam.second_moment[i].size())});
  }

  write_u64(os, static_cast<std::uint64_t>(state.step));
  std::ostringstream rng;
  rng << state.rng;
  write_string(os, rng.str());

  write_u64(os, state.pool.capacity());
  write_u64(os, state.pool.rejected());
  write_u64(os, state.pool.size());
  for (const auto& e : state.pool.entries()) {
    write_u64(os, static_cast<std::uint64_t>(e.step));
    write_i32(os, e.state.last_token);
    write_cells(os, e.state.encoder);
    write_cells(os, e.state.prediction);
  }
}

TrainerState read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw FormatError(fmt::format("checkpoint version {} unsupported (expected {})", version, kCheckpointVersion));

  ModelConfig config;
  auto fields = config_fields(config);
  const std::uint32_t n_fields = read_u32(is);
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    const std::string name = read_string(is);
    const std::string value = read_string(is);
    if (name == "joint_mode") {
      config.joint_mode = joint_mode_from_string(value);
      continue;
    }
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == name; });
    if (it == fields.end()) throw FormatError("unknown config field " + name);
    *it->second = std::stol(value);
  }
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }

  TrainerState state{Model{config, ModelParams::zeros(config)}, {}, 0, {}, StatePool{}};
  auto views = state.model.params.views();
  if (read_u32(is) != views.size()) throw FormatError("parameter count mismatch");
  for (auto& v : views) {
    const std::string name = read_string(is);
    const auto rows = read_u64(is), cols = read_u64(is);
    if (name != v.name || rows != static_cast<std::uint64_t>(v.rows) || cols != static_cast<std::uint64_t>(v.cols))
      throw FormatError(fmt::format("parameter {} ({}x{}) does not match {} ({}x{})", name, rows, cols, v.name,
                                    v.rows, v.cols));
    read_reals(is, v.values);
  }

  auto& adam = state.optimizer;
  adam.learning_rate = read_f64(is);
  adam.beta1 = read_f64(is);
  adam.beta2 = read_f64(is);
  adam.epsilon = read_f64(is);
  adam.step = static_cast<long>(read_u64(is));
  const std::uint32_t n_moments = read_u32(is);
  if (n_moments != 0 && n_moments != views.size()) throw FormatError("optimizer moment count mismatch");
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    adam.first_moment.push_back(read_vec(is));
    adam.second_moment.push_back(read_vec(is));
    if (adam.first_moment.back().size() != static_cast<Index>(views[i].values.size()) ||
        adam.second_moment.back().size() != static_cast<Index>(views[i].values.size()))
      throw FormatError("optimizer moment size mismatch for " + views[i].name);
  }

  state.step = static_cast<long>(read_u64(is));
  std::istringstream rng(read_string(is));
  rng >> state.rng;
  if (!rng) throw FormatError("bad PRNG state");

  state.pool = StatePool(read_u64(is));
  const std::uint64_t rejected = read_u64(is);
  const std::uint64_t n_entries = read_u64(is);
  if (n_entries > state.pool.capacity()) throw FormatError("pool larger than its capacity");
  for (std::uint64_t i = 0; i < n_entries; ++i) {
    const long step = static_cast<long>(read_u64(is));
    RecurrentState s = RecurrentState::zero(config);
    s.last_token = read_i32(is);
    read_cells(is, s.encoder);
    read_cells(is, s.prediction);
    if (!state.pool.deposit(s, step)) throw FormatError("non-finite pool entry");
  }
  state.pool.set_rejected(rejected);
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainerState& state) {
  // Written beside the target and renamed, so a crash never leaves half a file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    write_checkpoint(os, state);
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_checkpoint(is);
}

}  // namespace rnnt
