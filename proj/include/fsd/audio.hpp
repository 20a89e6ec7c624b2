#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fsd {

// Mono audio with amplitudes in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Integer PCM as stored in the container, one vector per channel.
struct PcmAudio {
  std::vector<std::vector<std::int32_t>> channels;
  int sample_rate = 0;
  int bits_per_sample = 0;

  std::size_t frames() const { return channels.empty() ? 0 : channels.front().size(); }
};

// Full FLAC stream decoder (all subframe types, stereo decorrelation, CRC
// checks). Metadata other than STREAMINFO is skipped.
PcmAudio decode_flac(std::span<const std::uint8_t> bytes);

// RIFF/WAVE reader: integer PCM 8/16/24/32 bit and IEEE float 32/64 bit,
// including WAVE_FORMAT_EXTENSIBLE. Float data is returned as the
// normalized waveform of channel 0 through read_wav_waveform.
struct WavAudio {
  std::vector<std::vector<double>> channels;  // normalized to [-1, 1]
  int sample_rate = 0;
};
WavAudio read_wav(std::span<const std::uint8_t> bytes);

// Loads a single-channel FLAC or WAV file (detected from the magic bytes).
// Integer samples are scaled by 2^-(bits-1), so 16-bit 32767 -> 32767/32768.
Waveform load_waveform(const std::filesystem::path& path);

// Writes 16-bit PCM mono WAV; samples are clipped to [-1, 1) and rounded.
void write_wav_pcm16(const std::filesystem::path& path, const Waveform& wave);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace fsd
