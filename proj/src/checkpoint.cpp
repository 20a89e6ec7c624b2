#include "fsd/checkpoint.hpp"

#include "fsd/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace fsd {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  if (offset + sizeof(T) > in.size()) throw DataError("checkpoint: truncated file");
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

std::string kind_name(ParameterKind kind) {
  switch (kind) {
    case ParameterKind::kWeight: return "weight";
    case ParameterKind::kUnitRows: return "unit_rows";
    case ParameterKind::kBuffer: return "buffer";
  }
  return "weight";
}

// Appends a matrix to the payload and returns its offset in floats.
std::size_t append_matrix(std::string& payload, const RowMatrix<float>& m) {
  const std::size_t offset = payload.size() / 4;
  for (Index i = 0; i < m.size(); ++i) put_le<float>(payload, m.data()[i]);
  return offset;
}

RowMatrix<float> read_matrix(const std::string& payload, std::size_t offset, Index rows,
                             Index cols) {
  RowMatrix<float> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = get_le<float>(payload, (offset + static_cast<std::size_t>(i)) * 4);
  }
  return m;
}

struct RawCheckpoint {
  Json header;
  std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string prefix(20, '\0');
  in.read(prefix.data(), 20);
  if (!in || std::memcmp(prefix.data(), kMagic, 8) != 0) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  const auto version = get_le<std::uint32_t>(prefix, 8);
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_length = get_le<std::uint64_t>(prefix, 12);
  std::string header_text(header_length, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_length));
  if (!in) throw DataError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    raw.header = Json::parse(header_text);
  } catch (const Json::parse_error& e) {
    throw DataError(path.string() + ": corrupt header: " + e.what());
  }
  if (with_payload) {
    raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return raw;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& network,
                     const Adam<float>* optimizer, const Json& metadata) {
  std::string payload;
  Json tensors = Json::array();
  for (const Parameter<float>* p : network.parameters()) {
    const std::size_t offset = append_matrix(payload, p->value);
    tensors.push_back({{"name", p->name},
                       {"rows", p->value.rows()},
                       {"cols", p->value.cols()},
                       {"kind", kind_name(p->kind)},
                       {"offset", offset}});
  }
  Json header{{"format_version", kCheckpointVersion},
              {"network", to_json(network.spec())},
              {"has_auxiliary", network.has_auxiliary()},
              {"tensors", tensors},
              {"metadata", metadata},
              {"optimizer", nullptr}};
  if (optimizer != nullptr) {
    Json moments = Json::array();
    for (const auto& [name, m] : optimizer->moments()) {
      const std::size_t first = append_matrix(payload, m.first);
      const std::size_t second = append_matrix(payload, m.second);
      moments.push_back({{"name", name},
                         {"rows", m.first.rows()},
                         {"cols", m.first.cols()},
                         {"first", first},
                         {"second", second}});
    }
    const AdamConfig& c = optimizer->config();
    header["optimizer"] = {{"kind", "adam"},
                           {"beta1", c.beta1},
                           {"beta2", c.beta2},
                           {"epsilon", c.epsilon},
                           {"weight_decay", c.weight_decay},
                           {"learning_rate", optimizer->learning_rate()},
                           {"steps", optimizer->steps()},
                           {"moments", moments}};
  }

  const std::string header_text = header.dump();
  std::string prefix(kMagic, 8);
  put_le<std::uint32_t>(prefix, kCheckpointVersion);
  put_le<std::uint64_t>(prefix, header_text.size());

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out << prefix << header_text << payload;
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Json read_checkpoint_header(const std::filesystem::path& path) {
  return read_raw(path, false).header;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path, true);
  const Json& h = raw.header;
  const std::string where = path.string() + ": ";
  Checkpoint ckpt;
  try {
    const NetworkSpec spec = network_spec_from_json(h.at("network"));
    ckpt.network = Network<float>(spec, 0, h.at("has_auxiliary").get<bool>());

    std::map<std::string, const Json*> table;
    for (const Json& t : h.at("tensors")) table[t.at("name").get<std::string>()] = &t;
    for (Parameter<float>* p : ckpt.network.parameters()) {
      const auto it = table.find(p->name);
      if (it == table.end()) throw DataError(where + "missing tensor " + p->name);
      const Json& t = *it->second;
      const Index rows = t.at("rows").get<Index>();
      const Index cols = t.at("cols").get<Index>();
      if (rows != p->value.rows() || cols != p->value.cols()) {
        throw DataError(where + "tensor " + p->name + " has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", network expects " +
                        std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
      }
      p->value = read_matrix(raw.payload, t.at("offset").get<std::size_t>(), rows, cols);
      table.erase(it);
    }
    if (!table.empty()) {
      throw DataError(where + "unexpected tensor " + table.begin()->first +
                      " for the stored network spec");
    }

    const Json& opt = h.at("optimizer");
    if (!opt.is_null()) {
      AdamConfig c;
      c.beta1 = opt.at("beta1").get<double>();
      c.beta2 = opt.at("beta2").get<double>();
      c.epsilon = opt.at("epsilon").get<double>();
      c.weight_decay = opt.at("weight_decay").get<double>();
      Adam<float> adam(c, opt.at("learning_rate").get<double>());
      adam.set_steps(opt.at("steps").get<long>());
      for (const Json& m : opt.at("moments")) {
        const Index rows = m.at("rows").get<Index>();
        const Index cols = m.at("cols").get<Index>();
        adam.moments()[m.at("name").get<std::string>()] = {
            read_matrix(raw.payload, m.at("first").get<std::size_t>(), rows, cols),
            read_matrix(raw.payload, m.at("second").get<std::size_t>(), rows, cols)};
      }
      ckpt.optimizer = std::move(adam);
    }
    ckpt.metadata = h.value("metadata", Json::object());
  } catch (const Json::exception& e) {
    throw DataError(where + "malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(where + "invalid network spec: " + e.what());
  }
  ckpt.network.set_training(false);
  return ckpt;
}

}  // namespace fsd
