#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "prosody_rl/error.hpp"

namespace prosody_rl {

inline constexpr double kDefaultSampleRate = 22050.0;

struct AudioBuffer {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  double sample_rate = kDefaultSampleRate;

  [[nodiscard]] double duration() const noexcept {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
  [[nodiscard]] std::size_t index_at(double seconds) const noexcept {
    const double idx = std::floor(seconds * sample_rate + 0.5);
    if (idx <= 0) return 0;
    return std::min(samples.size(), static_cast<std::size_t>(idx));
  }
};

/// Decodes 16-bit little-endian PCM into normalized amplitudes.
inline std::vector<double> decode_pcm16(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 2 != 0) fail(Errc::FormatError, "PCM16 payload has odd byte count");
  std::vector<double> out(bytes.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto lo = static_cast<std::uint16_t>(bytes[2 * i]);
    const auto hi = static_cast<std::uint16_t>(bytes[2 * i + 1]);
    const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
    out[i] = static_cast<double>(v) / 32768.0;
  }
  return out;
}

inline std::vector<std::uint8_t> encode_pcm16(std::span<const double> samples) {
  std::vector<std::uint8_t> out(samples.size() * 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double clipped = std::clamp(samples[i], -1.0, 32767.0 / 32768.0);
    const auto v = static_cast<std::int16_t>(std::lround(clipped * 32768.0));
    const auto u = static_cast<std::uint16_t>(v);
    out[2 * i] = static_cast<std::uint8_t>(u & 0xFF);
    out[2 * i + 1] = static_cast<std::uint8_t>(u >> 8);
  }
  return out;
}

namespace detail {

inline std::uint32_t read_le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_le32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xFF));
}
inline void put_le16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x & 0xFF));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}

}  // namespace detail

/// Parses a RIFF/WAVE image. Only PCM 16-bit mono is accepted; stereo is an
/// error rather than a silent downmix.
inline AudioBuffer parse_wav(std::span<const std::uint8_t> bytes) {
  using detail::read_le16;
  using detail::read_le32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(Errc::FormatError, "not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) fail(Errc::FormatError, "truncated WAVE chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) fail(Errc::FormatError, "fmt chunk too small");
      const std::uint16_t format = read_le16(bytes.data() + body);
      channels = read_le16(bytes.data() + body + 2);
      rate = read_le32(bytes.data() + body + 4);
      bits = read_le16(bytes.data() + body + 14);
      if (format != 1) fail(Errc::FormatError, "only PCM WAVE is supported");
      if (channels != 1) fail(Errc::FormatError, "expected mono audio, got " + std::to_string(channels) + " channels");
      if (bits != 16) fail(Errc::FormatError, "expected 16-bit samples, got " + std::to_string(bits));
      if (rate == 0) fail(Errc::FormatError, "sample rate is zero");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) fail(Errc::FormatError, "data chunk precedes fmt chunk");
      AudioBuffer out;
      out.sample_rate = rate;
      out.samples = decode_pcm16(bytes.subspan(body, size - size % 2));
      return out;
    }
    pos = body + size + (size % 2);
  }
  fail(Errc::FormatError, "WAVE file has no data chunk");
}

inline std::vector<std::uint8_t> serialize_wav(const AudioBuffer& audio) {
  using detail::put_le16;
  using detail::put_le32;
  const auto pcm = encode_pcm16(audio.samples);
  const auto rate = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
  std::vector<std::uint8_t> out;
  out.reserve(44 + pcm.size());
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_le32(out, static_cast<std::uint32_t>(36 + pcm.size()));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_le32(out, 16);
  put_le16(out, 1);
  put_le16(out, 1);
  put_le32(out, rate);
  put_le32(out, rate * 2);
  put_le16(out, 2);
  put_le16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_le32(out, static_cast<std::uint32_t>(pcm.size()));
  out.insert(out.end(), pcm.begin(), pcm.end());
  return out;
}

inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::FormatError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

inline void write_wav(const std::string& path, const AudioBuffer& audio) {
  const auto bytes = serialize_wav(audio);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::FormatError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace prosody_rl
