#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "avfusion/audio.hpp"

// RIFF/WAVE, 16-bit little-endian PCM, interleaved channels.
namespace avf::wav {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::int16_t quantize(float x) {
  const float c = std::clamp(x, -1.0f, 1.0f);
  return static_cast<std::int16_t>(std::lround(static_cast<double>(c) * 32767.0));
}

inline float dequantize(std::int16_t q) {
  return std::max(-1.0f, static_cast<float>(static_cast<double>(q) / 32767.0));
}

/// Snaps samples onto the 16-bit grid so that writing and reading back is exact.
inline void quantize_in_place(Tensor<float>& samples) {
  for (auto& v : samples.data()) v = dequantize(quantize(v));
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_u16(std::string& out, std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

inline std::string encode(const audio::AudioChunk& chunk) {
  const std::size_t channels = chunk.channels(), n = chunk.length();
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(channels * n * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, static_cast<std::uint16_t>(channels));
  detail::put_u32(out, static_cast<std::uint32_t>(chunk.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(chunk.sample_rate * channels * 2));
  detail::put_u16(out, static_cast<std::uint16_t>(channels * 2));
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::int16_t q = quantize(chunk.samples[c * n + i]);
      out.append(reinterpret_cast<const char*>(&q), 2);
    }
  return out;
}

inline audio::AudioChunk decode(const std::string& bytes, const std::string& where = "wav") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError(where + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = detail::get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError(where + ": truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(where + ": short fmt chunk");
      format = detail::get_u16(p + body);
      channels = detail::get_u16(p + body + 2);
      rate = detail::get_u32(p + body + 4);
      bits = detail::get_u16(p + body + 14);
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(where + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw FormatError(where + ": only 16-bit PCM is supported");
      if (channels == 0) throw FormatError(where + ": zero channels");
      const std::size_t frames = size / (2u * channels);
      if (frames == 0) throw FormatError(where + ": empty data chunk");
      audio::AudioChunk chunk;
      chunk.sample_rate = rate;
      chunk.samples = Tensor<float>({channels, frames});
      const unsigned char* d = p + body;
      for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t c = 0; c < channels; ++c) {
          const auto q = static_cast<std::int16_t>(detail::get_u16(d + 2 * (i * channels + c)));
          chunk.samples[c * frames + i] = dequantize(q);
        }
      return chunk;
    }
    pos = body + size + (size & 1u);
  }
  throw FormatError(where + ": no data chunk");
}

inline void save(const std::filesystem::path& path, const audio::AudioChunk& chunk) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode(chunk);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline audio::AudioChunk load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode(bytes, path.string());
}

/// Reads only the fmt/data headers: {channels, sample_rate, frames}.
struct Info {
  std::size_t channels = 0, sample_rate = 0, frames = 0;
};

inline Info peek(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> head(4096);
  is.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  const std::size_t got = static_cast<std::size_t>(is.gcount());
  const std::string where = path.string();
  if (got < 12 || std::memcmp(head.data(), "RIFF", 4) != 0 || std::memcmp(head.data() + 8, "WAVE", 4) != 0)
    throw FormatError(where + ": not a RIFF/WAVE file");
  Info info;
  std::uint16_t bits = 0, format = 0;
  std::size_t pos = 12;
  while (pos + 8 <= got) {
    const std::uint32_t size = detail::get_u32(head.data() + pos + 4);
    if (std::memcmp(head.data() + pos, "fmt ", 4) == 0 && pos + 24 <= got) {
      format = detail::get_u16(head.data() + pos + 8);
      info.channels = detail::get_u16(head.data() + pos + 10);
      info.sample_rate = detail::get_u32(head.data() + pos + 12);
      bits = detail::get_u16(head.data() + pos + 22);
    } else if (std::memcmp(head.data() + pos, "data", 4) == 0) {
      if (format != 1 || bits != 16 || info.channels == 0)
        throw FormatError(where + ": only 16-bit PCM is supported");
      info.frames = size / (2u * info.channels);
      return info;
    }
    pos += 8 + size + (size & 1u);
  }
  throw FormatError(where + ": no data chunk in header");
}

}  // namespace avf::wav
