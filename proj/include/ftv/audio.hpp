#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ftv/common.hpp"

namespace ftv {

// Mono waveform, amplitude in [-1, 1], plus its sample rate.
struct AudioBuffer {
  std::vector<Real> samples;
  std::size_t sample_rate = 16000;
};

namespace detail {
inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}
inline std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}
inline void write_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}
}  // namespace detail

// Reads a 16-bit PCM mono RIFF/WAVE file.
inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav: " + path);
  char tag[4];
  in.read(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) throw IoError("not a RIFF file: " + path);
  detail::read_u32(in);  // riff size
  in.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw IoError("not a WAVE file: " + path);

  AudioBuffer buf;
  std::uint16_t bits = 0, channels = 0;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const std::uint32_t chunk_size = detail::read_u32(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const std::uint16_t format = detail::read_u16(in);
      channels = detail::read_u16(in);
      buf.sample_rate = detail::read_u32(in);
      detail::read_u32(in);  // byte rate
      detail::read_u16(in);  // block align
      bits = detail::read_u16(in);
      if (chunk_size > 16) in.seekg(chunk_size - 16, std::ios::cur);
      if (format != 1) throw IoError("unsupported WAV encoding (PCM only): " + path);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw IoError("WAV data before fmt chunk: " + path);
      if (bits != 16) throw IoError("unsupported bit depth (16-bit only): " + path);
      if (channels != 1) throw IoError("unsupported channel count (mono only): " + path);
      const std::size_t n = chunk_size / 2;
      buf.samples.resize(n);
      std::vector<char> raw(chunk_size);
      in.read(raw.data(), static_cast<std::streamsize>(chunk_size));
      if (static_cast<std::size_t>(in.gcount()) != chunk_size)
        throw IoError("truncated WAV data: " + path);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s = static_cast<std::int16_t>(
            static_cast<unsigned char>(raw[2 * i]) |
            (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
        buf.samples[i] = static_cast<Real>(s) / 32768.0;
      }
      return buf;
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  throw IoError("WAV file has no data chunk: " + path);
}

// Writes 16-bit PCM mono; samples are clipped to [-1, 1].
inline void write_wav(const AudioBuffer& buf, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write wav: " + path);
  const std::uint32_t data_size = static_cast<std::uint32_t>(buf.samples.size() * 2);
  out.write("RIFF", 4);
  detail::write_u32(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  detail::write_u32(out, 16);
  detail::write_u16(out, 1);  // PCM
  detail::write_u16(out, 1);  // mono
  detail::write_u32(out, static_cast<std::uint32_t>(buf.sample_rate));
  detail::write_u32(out, static_cast<std::uint32_t>(buf.sample_rate * 2));
  detail::write_u16(out, 2);
  detail::write_u16(out, 16);
  out.write("data", 4);
  detail::write_u32(out, data_size);
  for (Real s : buf.samples) {
    const Real c = std::clamp(s, -1.0, 1.0);
    const std::int16_t q =
        static_cast<std::int16_t>(std::lround(c * 32767.0));
    detail::write_u16(out, static_cast<std::uint16_t>(q));
  }
  if (!out) throw IoError("failed writing wav: " + path);
}

}  // namespace ftv
