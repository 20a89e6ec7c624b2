#include "fsd/audio.hpp"

#include "fsd/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fsd {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw DataError("failed reading " + path.string());
  return bytes;
}

// ------------------------------------------------------------------- FLAC

namespace {

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t byte_position() const { return bit_ / 8; }
  bool at_end() const { return bit_ >= bytes_.size() * 8; }
  bool byte_aligned() const { return bit_ % 8 == 0; }
  void align() { bit_ = (bit_ + 7) / 8 * 8; }

  std::uint32_t bit() {
    if (bit_ >= bytes_.size() * 8) throw DataError("FLAC: unexpected end of stream");
    const std::uint32_t b = (bytes_[bit_ / 8] >> (7 - bit_ % 8)) & 1u;
    ++bit_;
    return b;
  }

  std::uint64_t bits(int n) {
    std::uint64_t v = 0;
    // Byte-at-a-time when aligned; bitwise otherwise.
    while (n >= 8 && byte_aligned()) {
      if (bit_ / 8 >= bytes_.size()) throw DataError("FLAC: unexpected end of stream");
      v = (v << 8) | bytes_[bit_ / 8];
      bit_ += 8;
      n -= 8;
    }
    while (n-- > 0) v = (v << 1) | bit();
    return v;
  }

  std::int64_t signed_bits(int n) {
    if (n == 0) return 0;
    const std::uint64_t v = bits(n);
    const std::uint64_t sign = std::uint64_t{1} << (n - 1);
    return static_cast<std::int64_t>(v ^ sign) - static_cast<std::int64_t>(sign);
  }

  std::uint32_t unary() {
    std::uint32_t zeros = 0;
    while (bit() == 0) ++zeros;
    return zeros;
  }

  std::uint64_t utf8_number() {
    const auto first = static_cast<std::uint32_t>(bits(8));
    if ((first & 0x80) == 0) return first;
    int extra = 0;
    std::uint32_t mask = 0x40;
    while (first & mask) {
      ++extra;
      mask >>= 1;
    }
    if (extra < 1 || extra > 6) throw DataError("FLAC: bad coded frame number");
    std::uint64_t v = first & (mask - 1);
    for (int i = 0; i < extra; ++i) {
      const auto b = static_cast<std::uint32_t>(bits(8));
      if ((b & 0xC0) != 0x80) throw DataError("FLAC: bad coded frame number");
      v = (v << 6) | (b & 0x3F);
    }
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t bit_ = 0;
};

std::uint8_t crc8(std::span<const std::uint8_t> data) {
  std::uint8_t crc = 0;
  for (std::uint8_t byte : data) {
    crc ^= byte;
    for (int i = 0; i < 8; ++i) crc = (crc & 0x80) ? static_cast<std::uint8_t>((crc << 1) ^ 0x07)
                                                   : static_cast<std::uint8_t>(crc << 1);
  }
  return crc;
}

std::uint16_t crc16(std::span<const std::uint8_t> data) {
  std::uint16_t crc = 0;
  for (std::uint8_t byte : data) {
    crc ^= static_cast<std::uint16_t>(byte << 8);
    for (int i = 0; i < 8; ++i) {
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x8005)
                           : static_cast<std::uint16_t>(crc << 1);
    }
  }
  return crc;
}

struct StreamInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  std::uint64_t total_samples = 0;
};

void read_residual(BitReader& br, int predictor_order, std::size_t block_size,
                   std::vector<std::int64_t>& out) {
  const auto method = br.bits(2);
  if (method > 1) throw DataError("FLAC: reserved residual coding method");
  const int param_bits = method == 0 ? 4 : 5;
  const std::uint32_t escape = method == 0 ? 15u : 31u;
  const auto partition_order = static_cast<int>(br.bits(4));
  const std::size_t partitions = std::size_t{1} << partition_order;
  const std::size_t per_partition = block_size >> partition_order;
  if (per_partition * partitions != block_size ||
      per_partition < static_cast<std::size_t>(predictor_order)) {
    throw DataError("FLAC: invalid residual partition order");
  }
  for (std::size_t p = 0; p < partitions; ++p) {
    const std::size_t count = p == 0 ? per_partition - predictor_order : per_partition;
    const auto param = static_cast<std::uint32_t>(br.bits(param_bits));
    if (param == escape) {
      const auto raw_bits = static_cast<int>(br.bits(5));
      for (std::size_t i = 0; i < count; ++i) out.push_back(br.signed_bits(raw_bits));
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t q = br.unary();
        const std::uint64_t u = (q << param) | br.bits(static_cast<int>(param));
        out.push_back(static_cast<std::int64_t>(u >> 1) ^ -static_cast<std::int64_t>(u & 1));
      }
    }
  }
}

std::vector<std::int64_t> read_subframe(BitReader& br, std::size_t block_size, int bps) {
  if (br.bit() != 0) throw DataError("FLAC: subframe padding bit set");
  const auto type = static_cast<std::uint32_t>(br.bits(6));
  int wasted = 0;
  if (br.bit()) wasted = static_cast<int>(br.unary()) + 1;
  bps -= wasted;
  if (bps <= 0) throw DataError("FLAC: invalid wasted-bits count");

  std::vector<std::int64_t> s;
  s.reserve(block_size);
  if (type == 0) {
    s.assign(block_size, br.signed_bits(bps));
  } else if (type == 1) {
    for (std::size_t i = 0; i < block_size; ++i) s.push_back(br.signed_bits(bps));
  } else if (type >= 8 && type <= 12) {
    const int order = static_cast<int>(type - 8);
    if (static_cast<std::size_t>(order) > block_size) throw DataError("FLAC: order > block");
    for (int i = 0; i < order; ++i) s.push_back(br.signed_bits(bps));
    std::vector<std::int64_t> residual;
    read_residual(br, order, block_size, residual);
    for (std::size_t i = order, r = 0; i < block_size; ++i, ++r) {
      std::int64_t pred = 0;
      switch (order) {
        case 0: pred = 0; break;
        case 1: pred = s[i - 1]; break;
        case 2: pred = 2 * s[i - 1] - s[i - 2]; break;
        case 3: pred = 3 * s[i - 1] - 3 * s[i - 2] + s[i - 3]; break;
        case 4: pred = 4 * s[i - 1] - 6 * s[i - 2] + 4 * s[i - 3] - s[i - 4]; break;
      }
      s.push_back(pred + residual[r]);
    }
  } else if (type >= 32) {
    const int order = static_cast<int>(type & 31) + 1;
    if (static_cast<std::size_t>(order) > block_size) throw DataError("FLAC: order > block");
    for (int i = 0; i < order; ++i) s.push_back(br.signed_bits(bps));
    const int precision = static_cast<int>(br.bits(4)) + 1;
    if (precision == 16) throw DataError("FLAC: invalid LPC precision");
    const auto shift = static_cast<int>(br.signed_bits(5));
    if (shift < 0) throw DataError("FLAC: negative LPC shift");
    std::vector<std::int64_t> coefs(order);
    for (auto& c : coefs) c = br.signed_bits(precision);
    std::vector<std::int64_t> residual;
    read_residual(br, order, block_size, residual);
    for (std::size_t i = order, r = 0; i < block_size; ++i, ++r) {
      std::int64_t acc = 0;
      for (int j = 0; j < order; ++j) acc += coefs[j] * s[i - 1 - j];
      s.push_back((acc >> shift) + residual[r]);
    }
  } else {
    throw DataError("FLAC: reserved subframe type " + std::to_string(type));
  }
  if (wasted) {
    for (auto& v : s) v *= (std::int64_t{1} << wasted);
  }
  return s;
}

std::size_t block_size_for(std::uint32_t code, BitReader& br) {
  if (code == 1) return 192;
  if (code >= 2 && code <= 5) return std::size_t{576} << (code - 2);
  if (code == 6) return static_cast<std::size_t>(br.bits(8)) + 1;
  if (code == 7) return static_cast<std::size_t>(br.bits(16)) + 1;
  if (code >= 8) return std::size_t{256} << (code - 8);
  throw DataError("FLAC: reserved block size");
}

}  // namespace

PcmAudio decode_flac(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "fLaC", 4) != 0) {
    throw DataError("not a FLAC stream");
  }
  BitReader br(bytes.subspan(4));
  StreamInfo info;
  bool have_info = false;
  for (bool last = false; !last;) {
    last = br.bit() != 0;
    const auto type = static_cast<std::uint32_t>(br.bits(7));
    const auto length = static_cast<std::size_t>(br.bits(24));
    if (type == 0) {
      if (length != 34) throw DataError("FLAC: bad STREAMINFO length");
      br.bits(16);  // min block size
      br.bits(16);  // max block size
      br.bits(24);  // min frame size
      br.bits(24);  // max frame size
      info.sample_rate = static_cast<int>(br.bits(20));
      info.channels = static_cast<int>(br.bits(3)) + 1;
      info.bits_per_sample = static_cast<int>(br.bits(5)) + 1;
      info.total_samples = br.bits(36);
      br.bits(64);  // MD5, first half
      br.bits(64);
      have_info = true;
    } else {
      for (std::size_t i = 0; i < length; ++i) br.bits(8);
    }
  }
  if (!have_info) throw DataError("FLAC: missing STREAMINFO");

  PcmAudio audio;
  audio.sample_rate = info.sample_rate;
  audio.bits_per_sample = info.bits_per_sample;
  audio.channels.assign(info.channels, {});
  const std::span<const std::uint8_t> stream = bytes.subspan(4);

  while (!br.at_end()) {
    if (info.total_samples > 0 && audio.frames() >= info.total_samples) break;
    const std::size_t frame_start = br.byte_position();
    if (bytes.size() - 4 - frame_start < 2) break;  // trailing padding
    const auto sync = br.bits(14);
    if (sync != 0x3FFE) throw DataError("FLAC: lost frame sync");
    if (br.bit() != 0) throw DataError("FLAC: reserved header bit set");
    br.bit();  // blocking strategy
    const auto bs_code = static_cast<std::uint32_t>(br.bits(4));
    const auto sr_code = static_cast<std::uint32_t>(br.bits(4));
    const auto ch_code = static_cast<std::uint32_t>(br.bits(4));
    const auto ss_code = static_cast<std::uint32_t>(br.bits(3));
    if (br.bit() != 0) throw DataError("FLAC: reserved header bit set");
    br.utf8_number();
    const std::size_t block_size = block_size_for(bs_code, br);
    if (sr_code == 12) {
      br.bits(8);
    } else if (sr_code == 13 || sr_code == 14) {
      br.bits(16);
    } else if (sr_code == 15) {
      throw DataError("FLAC: invalid sample rate code");
    }
    const std::size_t header_end = br.byte_position();
    const auto header_crc = static_cast<std::uint8_t>(br.bits(8));
    if (crc8(stream.subspan(frame_start, header_end - frame_start)) != header_crc) {
      throw DataError("FLAC: frame header CRC mismatch");
    }

    int bps = info.bits_per_sample;
    static constexpr std::array<int, 8> kSampleSizes{0, 8, 12, 0, 16, 20, 24, 32};
    if (ss_code != 0) {
      if (ss_code == 3) throw DataError("FLAC: reserved sample size");
      bps = kSampleSizes[ss_code];
    }
    int channels = 0;
    if (ch_code <= 7) {
      channels = static_cast<int>(ch_code) + 1;
    } else if (ch_code <= 10) {
      channels = 2;
    } else {
      throw DataError("FLAC: reserved channel assignment");
    }
    if (channels != info.channels) throw DataError("FLAC: channel count changed mid-stream");

    std::vector<std::vector<std::int64_t>> sub(channels);
    for (int c = 0; c < channels; ++c) {
      const bool side = (ch_code == 8 && c == 1) || (ch_code == 9 && c == 0) ||
                        (ch_code == 10 && c == 1);
      sub[c] = read_subframe(br, block_size, bps + (side ? 1 : 0));
    }
    br.align();
    const std::size_t frame_end = br.byte_position();
    const auto frame_crc = static_cast<std::uint16_t>(br.bits(16));
    if (crc16(stream.subspan(frame_start, frame_end - frame_start)) != frame_crc) {
      throw DataError("FLAC: frame CRC mismatch");
    }

    for (std::size_t i = 0; i < block_size; ++i) {
      std::int64_t left = 0;
      std::int64_t right = 0;
      switch (ch_code) {
        case 8:
          left = sub[0][i];
          right = left - sub[1][i];
          break;
        case 9:
          right = sub[1][i];
          left = sub[0][i] + right;
          break;
        case 10: {
          const std::int64_t side = sub[1][i];
          const std::int64_t mid = (sub[0][i] * 2) | (side & 1);
          left = (mid + side) >> 1;
          right = (mid - side) >> 1;
          break;
        }
        default:
          for (int c = 0; c < channels; ++c) {
            audio.channels[c].push_back(static_cast<std::int32_t>(sub[c][i]));
          }
          continue;
      }
      audio.channels[0].push_back(static_cast<std::int32_t>(left));
      audio.channels[1].push_back(static_cast<std::int32_t>(right));
    }
  }
  if (info.total_samples > 0 && audio.frames() > info.total_samples) {
    for (auto& ch : audio.channels) ch.resize(info.total_samples);
  }
  return audio;
}

// -------------------------------------------------------------------- WAV

namespace {

std::uint32_t le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

std::uint16_t le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

WavAudio read_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("not a RIFF/WAVE file");
  }
  int format = 0;
  int channels = 0;
  int sample_rate = 0;
  int bits = 0;
  std::span<const std::uint8_t> data;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::size_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = std::min(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (available < 16) throw DataError("WAV: truncated fmt chunk");
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      sample_rate = static_cast<int>(le32(bytes.data() + body + 4));
      bits = le16(bytes.data() + body + 14);
      if (format == 0xFFFE) {
        if (available < 26) throw DataError("WAV: truncated extensible fmt chunk");
        format = le16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.subspan(body, available);
      have_data = true;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt || !have_data) throw DataError("WAV: missing fmt or data chunk");
  if (channels < 1) throw DataError("WAV: invalid channel count");
  const bool is_float = format == 3;
  if (!(format == 1 || is_float)) {
    throw DataError("WAV: unsupported sample format " + std::to_string(format));
  }
  if ((is_float && bits != 32 && bits != 64) ||
      (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32)) {
    throw DataError("WAV: unsupported bit depth " + std::to_string(bits));
  }
  const std::size_t width = static_cast<std::size_t>(bits / 8);
  const std::size_t frames = data.size() / (width * channels);
  WavAudio audio;
  audio.sample_rate = sample_rate;
  audio.channels.assign(channels, std::vector<double>(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const std::uint8_t* p = data.data() + (i * channels + c) * width;
      double v = 0.0;
      if (is_float && bits == 32) {
        float f;
        std::memcpy(&f, p, 4);
        v = f;
      } else if (is_float) {
        std::memcpy(&v, p, 8);
      } else if (bits == 8) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
        if (s & 0x800000) s -= 0x1000000;
        v = s / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
      }
      audio.channels[c][i] = v;
    }
  }
  return audio;
}

Waveform load_waveform(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing audio file " + path.string());
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  Waveform wave;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "fLaC", 4) == 0) {
    const PcmAudio pcm = decode_flac(bytes);
    if (pcm.channels.size() != 1) {
      throw DataError(path.string() + ": single channel required");
    }
    const double scale = std::ldexp(1.0, -(pcm.bits_per_sample - 1));
    wave.sample_rate = pcm.sample_rate;
    wave.samples.reserve(pcm.frames());
    for (std::int32_t s : pcm.channels[0]) wave.samples.push_back(s * scale);
  } else if (bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0) {
    WavAudio wav = read_wav(bytes);
    if (wav.channels.size() != 1) throw DataError(path.string() + ": single channel required");
    wave.sample_rate = wav.sample_rate;
    wave.samples = std::move(wav.channels[0]);
  } else {
    throw DataError(path.string() + ": unsupported format (expected FLAC or WAV)");
  }
  if (wave.samples.empty()) throw DataError(path.string() + ": zero-length audio");
  return wave;
}

void write_wav_pcm16(const std::filesystem::path& path, const Waveform& wave) {
  const auto frames = static_cast<std::uint32_t>(wave.samples.size());
  const std::uint32_t data_bytes = frames * 2;
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  auto put = [&](const char* tag) { out.insert(out.end(), tag, tag + 4); };
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  put("RIFF");
  put32(36 + data_bytes);
  put("WAVE");
  put("fmt ");
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(wave.sample_rate));
  put32(static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put16(2);
  put16(16);
  put("data");
  put32(data_bytes);
  for (double x : wave.samples) {
    const double scaled = std::round(std::clamp(x, -1.0, 1.0) * 32768.0);
    const auto s = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put16(static_cast<std::uint16_t>(s));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw DataError("cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw DataError("failed writing " + path.string());
}

}  // namespace fsd
