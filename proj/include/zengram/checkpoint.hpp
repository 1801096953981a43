#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zengram/encoder.hpp"
#include "zengram/params.hpp"

namespace zengram {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam moments, one pair per parameter in store order.
struct OptimState {
  std::vector<num::Array> m, v;
  std::uint64_t step = 0;

  static OptimState zeros(const ParamStore& params);
  bool empty() const { return m.empty(); }
  bool operator==(const OptimState&) const = default;
};

/// Model, optimizer and the text assets needed to reuse it (vocabulary,
/// lexicon, training settings).
struct Checkpoint {
  EncoderConfig config;
  std::uint64_t step = 0;
  ParamStore params;
  OptimState optim;
  std::vector<std::pair<std::string, std::string>> assets;

  const std::string* asset(const std::string& name) const;
  void set_asset(const std::string& name, std::string text);

  Vocab vocab() const;
  NgramLexicon lexicon() const;
};

/// "ZENGRAM-CKPT v1\n" followed by little-endian records: step, config text,
/// named parameter table (name, rank, dims, doubles), optimizer moments,
/// assets.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "checkpoint");

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace zengram
