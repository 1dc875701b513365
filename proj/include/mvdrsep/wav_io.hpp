// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Little-endian RIFF/WAVE reader and writer: 16-bit PCM and 32-bit IEEE float,
// any channel count.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mvdrsep/error.hpp"
#include "mvdrsep/signal_core.hpp"

namespace mvdrsep {

enum class WavFormat { pcm16, float32 };

namespace detail {

inline void put_u16(std::ostream &os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline void put_u32(std::ostream &os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(const unsigned char *p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t get_u16(const unsigned char *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline void write_wav(std::ostream &os, const MultichannelWaveform &wave,
                      WavFormat format = WavFormat::float32) {
  const auto channels = static_cast<std::uint16_t>(wave.channels());
  const std::uint16_t bits = format == WavFormat::pcm16 ? 16 : 32;
  const std::uint16_t tag = format == WavFormat::pcm16 ? 1 : 3;
  const std::uint32_t block = channels * (bits / 8);
  const auto data_bytes = static_cast<std::uint32_t>(wave.length() * block);

  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::put_u32(os, 16);
  detail::put_u16(os, tag);
  detail::put_u16(os, channels);
  detail::put_u32(os, static_cast<std::uint32_t>(wave.sample_rate));
  detail::put_u32(os, static_cast<std::uint32_t>(wave.sample_rate) * block);
  detail::put_u16(os, static_cast<std::uint16_t>(block));
  detail::put_u16(os, bits);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);

  std::vector<char> buf(data_bytes);
  char *p = buf.data();
  for (Eigen::Index n = 0; n < wave.length(); ++n) {
    for (Eigen::Index r = 0; r < wave.channels(); ++r) {
      const double v = wave.samples(r, n);
      if (format == WavFormat::pcm16) {
        const double scaled = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        const auto s = static_cast<std::int16_t>(scaled);
        const auto u = static_cast<std::uint16_t>(s);
        *p++ = static_cast<char>(u & 0xff);
        *p++ = static_cast<char>(u >> 8);
      } else {
        const float f = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int k = 0; k < 4; ++k) *p++ = static_cast<char>((u >> (8 * k)) & 0xff);
      }
    }
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(os.good(), ErrorKind::data, "wav write failed");
}

inline MultichannelWaveform read_wav(std::istream &is) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          ErrorKind::data, "not a RIFF/WAVE file");

  std::uint16_t tag = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char *data = nullptr;
  std::uint32_t data_bytes = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char *chunk = bytes.data() + pos;
    const std::uint32_t size = detail::get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    require(body + size <= bytes.size(), ErrorKind::data, "truncated wav chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require(size >= 16, ErrorKind::data, "short fmt chunk");
      tag = detail::get_u16(bytes.data() + body);
      channels = detail::get_u16(bytes.data() + body + 2);
      rate = detail::get_u32(bytes.data() + body + 4);
      bits = detail::get_u16(bytes.data() + body + 14);
      if (tag == 0xfffe && size >= 26)  // WAVE_FORMAT_EXTENSIBLE: subformat tag
        tag = detail::get_u16(bytes.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_bytes = size;
    }
    pos = body + size + (size & 1);
  }
  require(channels > 0 && data != nullptr, ErrorKind::data,
          "wav missing fmt or data chunk");
  const bool pcm16 = tag == 1 && bits == 16;
  const bool f32 = tag == 3 && bits == 32;
  require(pcm16 || f32, ErrorKind::data,
          "unsupported wav encoding (need 16-bit PCM or 32-bit float)");

  const std::uint32_t block = channels * (bits / 8);
  const Eigen::Index frames = data_bytes / block;
  MultichannelWaveform wave(Eigen::MatrixXd(channels, frames), static_cast<int>(rate));
  const unsigned char *p = data;
  for (Eigen::Index n = 0; n < frames; ++n) {
    for (Eigen::Index r = 0; r < channels; ++r) {
      if (pcm16) {
        const auto s = static_cast<std::int16_t>(detail::get_u16(p));
        wave.samples(r, n) = s / 32768.0;
        p += 2;
      } else {
        const std::uint32_t u = detail::get_u32(p);
        float f;
        std::memcpy(&f, &u, 4);
        wave.samples(r, n) = f;
        p += 4;
      }
    }
  }
  return wave;
}

inline void write_wav_file(const std::string &path, const MultichannelWaveform &wave,
                           WavFormat format = WavFormat::float32) {
  std::ofstream os(path, std::ios::binary);
  require(os.is_open(), ErrorKind::data, "cannot open for writing: " + path);
  write_wav(os, wave, format);
}

inline MultichannelWaveform read_wav_file(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), ErrorKind::data, "cannot open wav: " + path);
  return read_wav(is);
}

}  // namespace mvdrsep
