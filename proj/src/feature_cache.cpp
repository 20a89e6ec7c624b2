#include "fsd/feature_cache.hpp"

#include "fsd/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fsd {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw DataError("feature cache: truncated record");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

constexpr char kMagic[4] = {'F', '0', 'S', 'B'};

}  // namespace

void write_feature_record(std::ostream& out, const FeatureMatrix& feature) {
  out.write(kMagic, 4);
  put_le<std::uint16_t>(out, kFeatureCacheVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(feature.trial_id.size()));
  out.write(feature.trial_id.data(), static_cast<std::streamsize>(feature.trial_id.size()));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(feature.rows()));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(feature.cols()));
  for (Eigen::Index i = 0; i < feature.values.size(); ++i) {
    put_le<float>(out, feature.values.data()[i]);
  }
}

FeatureMatrix read_feature_record(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("feature cache: bad magic");
  const auto version = get_le<std::uint16_t>(in);
  if (version != kFeatureCacheVersion) {
    throw DataError("feature cache: unsupported version " + std::to_string(version));
  }
  const auto id_length = get_le<std::uint32_t>(in);
  FeatureMatrix f;
  f.trial_id.resize(id_length);
  in.read(f.trial_id.data(), id_length);
  const auto rows = get_le<std::uint16_t>(in);
  const auto cols = get_le<std::uint16_t>(in);
  f.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = get_le<float>(in);
  return f;
}

void write_feature_cache(const std::filesystem::path& path,
                         const std::vector<FeatureMatrix>& features) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write feature cache " + tmp.string());
    for (const auto& f : features) write_feature_record(out, f);
    if (!out) throw DataError("failed writing feature cache " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

FeatureCache::FeatureCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw DataError("cannot open feature cache " + path_.string());
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::streamoff offset = in.tellg();
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
      throw DataError("feature cache " + path_.string() + ": bad magic at offset " +
                      std::to_string(offset));
    }
    const auto version = get_le<std::uint16_t>(in);
    if (version != kFeatureCacheVersion) {
      throw DataError("feature cache: unsupported version " + std::to_string(version));
    }
    const auto id_length = get_le<std::uint32_t>(in);
    std::string id(id_length, '\0');
    in.read(id.data(), id_length);
    const auto rows = get_le<std::uint16_t>(in);
    const auto cols = get_le<std::uint16_t>(in);
    in.seekg(static_cast<std::streamoff>(rows) * cols * 4, std::ios::cur);
    if (!in) throw DataError("feature cache " + path_.string() + ": truncated record " + id);
    offsets_[id] = offset;
  }
}

std::vector<std::string> FeatureCache::trial_ids() const {
  std::vector<std::string> ids;
  ids.reserve(offsets_.size());
  for (const auto& [id, offset] : offsets_) ids.push_back(id);
  return ids;
}

FeatureMatrix FeatureCache::load(const std::string& trial_id) const {
  const auto it = offsets_.find(trial_id);
  if (it == offsets_.end()) throw DataError("no cached features for trial " + trial_id);
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw DataError("cannot open feature cache " + path_.string());
  in.seekg(it->second);
  return read_feature_record(in);
}

std::vector<FeatureMatrix> FeatureCache::load_all() const {
  std::vector<FeatureMatrix> out;
  out.reserve(offsets_.size());
  for (const auto& [id, offset] : offsets_) out.push_back(load(id));
  return out;
}

}  // namespace fsd
