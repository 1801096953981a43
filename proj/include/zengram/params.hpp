#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "zengram/numerics.hpp"

namespace zengram {

/// Named parameter arrays in a fixed insertion order.
class ParamStore {
 public:
  num::Array& add(const std::string& name, num::Array value);
  num::Array& get(const std::string& name);
  const num::Array& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  num::Array& at(std::size_t i) { return entries_[i].second; }
  const num::Array& at(std::size_t i) const { return entries_[i].second; }
  std::size_t num_scalars() const;

  /// Same names and shapes in the same order.
  bool same_layout(const ParamStore& other) const;
  bool operator==(const ParamStore& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::pair<std::string, num::Array>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Lazily places parameters on a tape as borrowed leaves.
class ParamBinding {
 public:
  ParamBinding(num::Tape& tape, const ParamStore& store);
  /// Uses existing leaves, one per parameter in store order.
  ParamBinding(num::Tape& tape, const ParamStore& store, std::span<const num::Var> leaves);

  num::Var operator()(const std::string& name);
  num::Var operator()(std::size_t index);
  /// Leaf for parameter `index`, if it was used.
  std::optional<num::Var> bound(std::size_t index) const;
  num::Tape& tape() { return tape_; }
  const ParamStore& store() const { return store_; }

 private:
  num::Tape& tape_;
  const ParamStore& store_;
  std::vector<std::int64_t> leaf_;
};

}  // namespace zengram
