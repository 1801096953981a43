#include "zengram/params.hpp"

#include <optional>

namespace zengram {

num::Array& ParamStore::add(const std::string& name, num::Array value) {
  if (!index_.emplace(name, entries_.size()).second)
    throw num::NumericError("duplicate parameter name: " + name);
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw num::NumericError("unknown parameter: " + name);
  return it->second;
}

num::Array& ParamStore::get(const std::string& name) { return entries_[index_of(name)].second; }
const num::Array& ParamStore::get(const std::string& name) const { return entries_[index_of(name)].second; }

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, a] : entries_) n += a.size();
  return n;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].first != other.entries_[i].first || entries_[i].second.shape() != other.entries_[i].second.shape())
      return false;
  return true;
}

ParamBinding::ParamBinding(num::Tape& tape, const ParamStore& store)
    : tape_(tape), store_(store), leaf_(store.size(), -1) {}

ParamBinding::ParamBinding(num::Tape& tape, const ParamStore& store, std::span<const num::Var> leaves)
    : ParamBinding(tape, store) {
  if (leaves.size() != store.size()) throw num::NumericError("leaf count does not match the parameter store");
  for (std::size_t i = 0; i < leaves.size(); ++i) leaf_[i] = leaves[i].id;
}

num::Var ParamBinding::operator()(const std::string& name) { return (*this)(store_.index_of(name)); }

num::Var ParamBinding::operator()(std::size_t index) {
  if (leaf_[index] < 0) leaf_[index] = tape_.parameter(store_.at(index)).id;
  return {&tape_, static_cast<std::uint32_t>(leaf_[index])};
}

std::optional<num::Var> ParamBinding::bound(std::size_t index) const {
  if (leaf_[index] < 0) return std::nullopt;
  return num::Var{&tape_, static_cast<std::uint32_t>(leaf_[index])};
}

}  // namespace zengram
