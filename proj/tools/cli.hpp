#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zengram::cli {

/// Bad flags, settings or input paths. Maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat "key = value" settings. Later layers win when merged, so
/// defaults < file < command line.
class RunConfig {
 public:
  static const std::vector<std::string>& known_keys();
  static bool is_known(const std::string& key);

  /// '#' starts a comment line. Unknown keys and malformed lines throw.
  static RunConfig parse(const std::string& text, const std::string& source);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const;
  /// Overlays `over` onto this config.
  void merge(const RunConfig& over);
  /// Copy restricted to `keys`, in that order.
  RunConfig only(const std::vector<std::string>& keys) const;

  const std::string& str(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  std::string to_text() const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Runs one command line. Returns 0 on success, 1 on runtime failure and 2
/// on usage or configuration errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace zengram::cli
