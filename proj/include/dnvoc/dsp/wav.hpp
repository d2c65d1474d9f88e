// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// RIFF/WAVE reading (PCM 16/24/32-bit, IEEE float 32) and 16-bit PCM writing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dnvoc/dsp/types.hpp"

namespace dnvoc::dsp {

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  std::size_t frames = 0;
};

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

struct ParsedWav {
  WavInfo info;
  int format = 0;  // 1 = PCM, 3 = float
  std::vector<unsigned char> data;
};

inline ParsedWav parse_wav(const std::filesystem::path& path, bool want_data) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("wav: cannot open " + path.string());
  unsigned char hdr[12];
  if (!f.read(reinterpret_cast<char*>(hdr), 12) || std::memcmp(hdr, "RIFF", 4) ||
      std::memcmp(hdr + 8, "WAVE", 4))
    throw IoError("wav: not a RIFF/WAVE file: " + path.string());
  ParsedWav out;
  bool have_fmt = false;
  while (true) {
    unsigned char ch[8];
    if (!f.read(reinterpret_cast<char*>(ch), 8)) break;
    const std::uint32_t size = le32(ch + 4);
    if (!std::memcmp(ch, "fmt ", 4)) {
      std::vector<unsigned char> fmt(size);
      if (size < 16 || !f.read(reinterpret_cast<char*>(fmt.data()), size))
        throw IoError("wav: truncated fmt chunk: " + path.string());
      out.format = le16(fmt.data());
      out.info.channels = le16(fmt.data() + 2);
      out.info.sample_rate = static_cast<int>(le32(fmt.data() + 4));
      out.info.bits_per_sample = le16(fmt.data() + 14);
      if (out.format == 0xFFFE && size >= 26) out.format = le16(fmt.data() + 24);
      have_fmt = true;
    } else if (!std::memcmp(ch, "data", 4)) {
      if (!have_fmt) throw IoError("wav: data chunk before fmt chunk: " + path.string());
      const int bytes = out.info.bits_per_sample / 8;
      if (bytes <= 0 || out.info.channels <= 0) throw IoError("wav: bad format header: " + path.string());
      out.info.frames = size / static_cast<std::size_t>(bytes * out.info.channels);
      if (want_data) {
        out.data.resize(size);
        if (!f.read(reinterpret_cast<char*>(out.data.data()), size))
          throw IoError("wav: truncated data chunk: " + path.string());
      }
      return out;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw IoError("wav: no data chunk: " + path.string());
}

}  // namespace detail

inline WavInfo read_wav_info(const std::filesystem::path& path) {
  return detail::parse_wav(path, false).info;
}

// Multi-channel input is averaged to mono.
inline Waveform read_wav(const std::filesystem::path& path) {
  auto p = detail::parse_wav(path, true);
  const int bytes = p.info.bits_per_sample / 8, ch = p.info.channels;
  const bool pcm = p.format == 1 && (bytes == 2 || bytes == 3 || bytes == 4);
  const bool flt = p.format == 3 && bytes == 4;
  if (!pcm && !flt)
    throw IoError("wav: unsupported encoding (format " + std::to_string(p.format) + ", " +
                  std::to_string(p.info.bits_per_sample) + " bits): " + path.string());
  Waveform w{std::vector<double>(p.info.frames, 0.0), p.info.sample_rate};
  const unsigned char* d = p.data.data();
  for (std::size_t i = 0; i < p.info.frames; ++i) {
    double acc = 0;
    for (int c = 0; c < ch; ++c) {
      const unsigned char* s = d + (i * ch + c) * bytes;
      double v;
      if (flt) {
        float x;
        std::memcpy(&x, s, 4);
        v = x;
      } else if (bytes == 2) {
        v = static_cast<std::int16_t>(detail::le16(s)) / 32768.0;
      } else if (bytes == 3) {
        std::int32_t x = s[0] | (s[1] << 8) | (s[2] << 16);
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(detail::le32(s)) / 2147483648.0;
      }
      acc += v;
    }
    w.samples[i] = acc / ch;
  }
  return w;
}

inline std::int16_t to_pcm16(double v) {
  const double s = std::clamp(v, -1.0, 32767.0 / 32768.0) * 32768.0;
  return static_cast<std::int16_t>(std::lround(s));
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("wav: cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put16 = [&](std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<const char*>(b), 2);
  };
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  f.write("RIFF", 4);
  put32(36 + data_bytes);
  f.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(w.sample_rate));
  put32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(2);
  put16(16);
  f.write("data", 4);
  put32(data_bytes);
  for (double s : w.samples) put16(static_cast<std::uint16_t>(to_pcm16(s)));
  if (!f) throw IoError("wav: write failed: " + path.string());
}

}  // namespace dnvoc::dsp
