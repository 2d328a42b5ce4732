#pragma once

// Binary checkpoint: "VAGC", u32 version = 1, u32 tensor count, then per
// tensor a u16 name length, the UTF-8 name, a u8 rank, u32 dims and row-major
// f32 data; finally a u32-length-prefixed UTF-8 JSON trailer. All integers and
// floats are little-endian.

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "vagnmt/model.hpp"

namespace vagnmt {

inline constexpr char kCheckpointMagic[4] = {'V', 'A', 'G', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  // Holds at least "dims"; trained models add "config", "preprocessing"
  // (BPE merges and vocabularies for both sides), "epoch", "epochs_run",
  // "step" and "best_bleu".
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws FormatError on any structural problem, including missing or
// mis-shaped tensors.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vagnmt
