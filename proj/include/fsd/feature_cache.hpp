#pragma once

#include "fsd/frontend.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace fsd {

// Binary feature cache: a concatenation of records
//   "F0SB" | u16 version | u32 id length | id bytes (UTF-8) |
//   u16 rows | u16 cols | rows*cols little-endian f32, row-major
inline constexpr std::uint16_t kFeatureCacheVersion = 1;

void write_feature_record(std::ostream& out, const FeatureMatrix& feature);
FeatureMatrix read_feature_record(std::istream& in);

// Writes all records to a temporary file and renames it over `path`.
void write_feature_cache(const std::filesystem::path& path,
                         const std::vector<FeatureMatrix>& features);

// Random-access reader over a cache file; only the index is held in memory.
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path path);

  bool contains(const std::string& trial_id) const { return offsets_.count(trial_id) > 0; }
  std::size_t size() const { return offsets_.size(); }
  std::vector<std::string> trial_ids() const;

  FeatureMatrix load(const std::string& trial_id) const;
  std::vector<FeatureMatrix> load_all() const;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::map<std::string, std::streamoff> offsets_;
};

}  // namespace fsd
