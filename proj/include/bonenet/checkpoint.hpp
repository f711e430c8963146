#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bonenet/autograd.hpp"

namespace bonenet {

using Fingerprint = std::array<std::uint8_t, 32>;

/// SHA-256 of the given bytes.
Fingerprint sha256(std::string_view bytes);
std::string to_hex(const Fingerprint& fp);

/// On-disk layout (all integers little-endian):
///
///   "BAACKPT1"  u16 version  u8[32] fingerprint  u32 count
///   count x { u16 name_len, name, u8 rank, u32 dims[rank], f32 data[] }
///   u32 meta_len, meta (UTF-8 JSON: configs, epoch count, final lr)
struct Checkpoint {
  static constexpr std::uint16_t kVersion = 1;

  Fingerprint fingerprint{};
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string meta_json;

  const Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Fingerprint& fingerprint,
                      const std::vector<const Parameter*>& params, const std::string& meta_json);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// True when the file starts with the checkpoint magic.
bool is_checkpoint_file(const std::filesystem::path& path);

/// Rounds every value to the nearest float, i.e. to checkpoint precision.
void round_to_f32(const std::vector<Parameter*>& params);

/// Copies checkpoint tensors into same-named parameters. Throws
/// FormatError on a missing name or shape mismatch.
void load_parameters(const Checkpoint& ckpt, const std::vector<Parameter*>& params);

}  // namespace bonenet
