#include "fsd/audio.hpp"
#include "fsd/errors.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <fstream>

using namespace fsd;
using fsd::test::data_path;
using fsd::test::TempDir;

namespace {

template <typename T>
std::vector<T> read_raw(const std::string& name) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(data_path(name));
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  return out;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("audio") {

TEST_CASE("16-bit FLAC decodes to the reference samples") {
  const std::vector<std::int16_t> ref = read_raw<std::int16_t>("tone_16k_pcm16.raw");
  const PcmAudio pcm = decode_flac(read_file_bytes(data_path("tone_16k_pcm16.flac")));
  REQUIRE(pcm.channels.size() == 1);
  CHECK(pcm.sample_rate == 16000);
  CHECK(pcm.bits_per_sample == 16);
  REQUIRE(pcm.frames() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    REQUIRE(pcm.channels[0][i] == ref[i]);
  }
}

TEST_CASE("24-bit FLAC decodes to the reference samples") {
  const std::vector<std::int32_t> ref = read_raw<std::int32_t>("noise_16k_pcm24.raw");
  const PcmAudio pcm = decode_flac(read_file_bytes(data_path("noise_16k_pcm24.flac")));
  CHECK(pcm.bits_per_sample == 24);
  REQUIRE(pcm.frames() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    REQUIRE(pcm.channels[0][i] == ref[i]);
  }
  const Waveform wave = load_waveform(data_path("noise_16k_pcm24.flac"));
  CHECK(wave.samples[17] == doctest::Approx(ref[17] / 8388608.0).epsilon(1e-15));
}

TEST_CASE("full-scale samples map into [-1, 1)") {
  const Waveform wave = load_waveform(data_path("tone_16k_pcm16.flac"));
  CHECK(wave.samples[100] == 32767.0 / 32768.0);
  CHECK(wave.samples[101] == -1.0);
}

TEST_CASE("one second at 16 kHz gives 16000 samples") {
  const Waveform wave = load_waveform(data_path("tone_16k_pcm16.flac"));
  CHECK(wave.samples.size() == 16000);
  CHECK(wave.sample_rate == 16000);
  CHECK(wave.duration() == 1.0);
}

TEST_CASE("WAV and FLAC of the same PCM agree exactly") {
  const Waveform flac = load_waveform(data_path("tone_16k_pcm16.flac"));
  const Waveform wav = load_waveform(data_path("tone_16k_pcm16.wav"));
  CHECK(flac.samples == wav.samples);
}

TEST_CASE("float WAV is returned as stored") {
  const std::vector<std::int16_t> ref = read_raw<std::int16_t>("tone_16k_pcm16.raw");
  const Waveform wave = load_waveform(data_path("tone_16k_float.wav"));
  REQUIRE(wave.samples.size() == 2000);
  for (std::size_t i = 0; i < wave.samples.size(); ++i) {
    REQUIRE(wave.samples[i] == static_cast<double>(static_cast<float>(ref[i] / 32768.0)));
  }
}

TEST_CASE("silence and other sample rates") {
  const Waveform silence = load_waveform(data_path("silence_16k.flac"));
  CHECK(silence.samples.size() == 5000);
  for (double s : silence.samples) REQUIRE(s == 0.0);

  const Waveform low = load_waveform(data_path("tone_8k_pcm16.flac"));
  CHECK(low.sample_rate == 8000);
  CHECK(low.samples.size() == 8000);
}

TEST_CASE("stereo input is rejected") {
  for (const char* name : {"stereo_16k.flac", "stereo_16k.wav"}) {
    CAPTURE(name);
    CHECK_THROWS_WITH_AS(load_waveform(data_path(name)),
                         doctest::Contains("single channel required"), DataError);
  }
}

TEST_CASE("missing, foreign and damaged files are data errors") {
  TempDir dir("audio");
  CHECK_THROWS_WITH_AS(load_waveform(dir / "absent.flac"), doctest::Contains("missing"),
                       DataError);

  write_bytes(dir / "text.flac", {'h', 'e', 'l', 'l', 'o', ' ', 'w', 'o', 'r', 'l', 'd', '\n'});
  CHECK_THROWS_WITH_AS(load_waveform(dir / "text.flac"), doctest::Contains("unsupported format"),
                       DataError);

  std::vector<std::uint8_t> bytes = read_file_bytes(data_path("tone_16k_pcm16.flac"));
  bytes[bytes.size() / 2] ^= 0x5A;
  write_bytes(dir / "damaged.flac", bytes);
  CHECK_THROWS_AS(load_waveform(dir / "damaged.flac"), DataError);

  write_wav_pcm16(dir / "empty.wav", Waveform{{}, 16000});
  CHECK_THROWS_WITH_AS(load_waveform(dir / "empty.wav"), doctest::Contains("zero-length"),
                       DataError);
}

TEST_CASE("16-bit WAV writer round trip") {
  TempDir dir("audio");
  Waveform wave;
  wave.sample_rate = 22050;
  for (int i = -5; i < 5; ++i) wave.samples.push_back(i / 8.0);
  wave.samples.push_back(1.5);
  write_wav_pcm16(dir / "out.wav", wave);
  const Waveform back = load_waveform(dir / "out.wav");
  CHECK(back.sample_rate == 22050);
  REQUIRE(back.samples.size() == wave.samples.size());
  for (std::size_t i = 0; i + 1 < wave.samples.size(); ++i) {
    CHECK(back.samples[i] == wave.samples[i]);
  }
  CHECK(back.samples.back() == 32767.0 / 32768.0);
}

}  // TEST_SUITE
