#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "cct/config_file.hpp"
#include "cct/model.hpp"
#include "cct/optimizer.hpp"

namespace cct {

// Binary layout, little-endian throughout:
//   "CCTS" | u32 version | u32 len, config text | u64 seed | u64 epoch | u64 step
//   u32 n_tensors, then per tensor:
//     u32 name_len, name | u8 dtype (1 = f32, 2 = f64) | u32 rank | u64 dims[rank] | payload
//   u8 has_optimizer; when set: u64 adam_step, u32 n, then n x (m tensor, v tensor)
// The config text is KeyValueConfig::serialize() of the model and optimizer
// keys plus any run-level extras.
inline constexpr char kCheckpointMagic[4] = {'C', 'C', 'T', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelConfig model;
  AdamWHyper optimizer;
  KeyValueConfig extras;  // run metadata not covered by the model/optimizer records
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  ParameterSet<T> params;
  std::optional<AdamWState<T>> optimizer_state;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt);

// Rejects unknown versions, dtype mismatches and parameter names or shapes
// that differ from the canonical layout of the stored config.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace cct
