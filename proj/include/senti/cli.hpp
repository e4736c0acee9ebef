#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>

namespace senti {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingArtifact = 3;

/// Runs one subcommand. args[0] is the program name. Failures print a single
/// `error code=<n> kind=<kind> detail=<text>` line to `err`.
int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// Plain-text key=value record of a run directory: config hashes, seeds,
/// split sizes, stage wall times and output digests.
class RunManifest {
 public:
  static RunManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::string* get(const std::string& key) const;
  /// Drops every key under "stage.<stage>.".
  void clear_stage(const std::string& stage);
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace senti
