#pragma once

#include "puat/nets.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace puat {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string rng_state;  // textual engine state(s)
  std::int64_t epoch = 0;
  std::int64_t step = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary archive with a text header: magic, format version, NetSpec,
/// metadata, then every tensor of C, C', G, D and A including normalization
/// and power-iteration buffers. Doubles are stored in host byte order.
void save_checkpoint(const std::filesystem::path& file, const ModelBundle& m, const CheckpointMeta& meta = {});
ModelBundle load_checkpoint(const std::filesystem::path& file, CheckpointMeta* meta = nullptr);

/// Key = value lines shared by checkpoints and config files.
std::string netspec_lines(const NetSpec& spec);
/// Sets one NetSpec field from text. Returns false for an unknown key.
bool set_netspec_field(NetSpec& spec, const std::string& key, const std::string& value);

}  // namespace puat
