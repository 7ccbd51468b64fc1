#pragma once

// Checkpoint files: "RNTC", a 32-bit version, the model configuration, the
// named parameter table, Adam moments, the step, the trainer PRNG and the
// RSP state pool. All numbers are little-endian; reals are 64-bit.

#include "rnnt/binary_io.hpp"
#include "rnnt/trainer.hpp"

#include <filesystem>
#include <iosfwd>

namespace rnnt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const TrainerState& state);
/// Throws binary::FormatError on a bad magic, version or table.
TrainerState read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const TrainerState& state);
TrainerState load_checkpoint(const std::filesystem::path& path);

}  // namespace rnnt
