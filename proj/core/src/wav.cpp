#include "takin/wav.hpp"

#include <cstring>
#include <fstream>

#include "takin/common.hpp"

namespace takin::audio {

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(b, 2);
}

}  // namespace

std::vector<std::int16_t> read_wav(const std::string& path, int expected_rate) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path);

  char tag[4];
  in.read(tag, 4);
  require(in.good() && std::memcmp(tag, "RIFF", 4) == 0, ErrorKind::io,
          path + ": not a RIFF file");
  read_u32(in);  // riff size
  in.read(tag, 4);
  require(in.good() && std::memcmp(tag, "WAVE", 4) == 0, ErrorKind::io,
          path + ": not a WAVE file");

  bool fmt_seen = false;
  std::vector<std::int16_t> samples;
  while (in.read(tag, 4)) {
    const std::uint32_t chunk_size = read_u32(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const std::uint16_t format = read_u16(in);
      const std::uint16_t channels = read_u16(in);
      const std::uint32_t rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      const std::uint16_t bits = read_u16(in);
      require(format == 1, ErrorKind::io, path + ": only PCM wav is supported");
      require(channels == 1, ErrorKind::io, path + ": only mono wav is supported");
      require(bits == 16, ErrorKind::io, path + ": only 16-bit wav is supported");
      require(static_cast<int>(rate) == expected_rate, ErrorKind::io,
              path + ": sample rate must be " + std::to_string(expected_rate));
      if (chunk_size > 16) in.seekg(chunk_size - 16, std::ios::cur);
      fmt_seen = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      require(fmt_seen, ErrorKind::io, path + ": data chunk precedes fmt chunk");
      const std::size_t count = chunk_size / 2;
      samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        samples[i] = static_cast<std::int16_t>(b[0] | (b[1] << 8));
      }
      require(in.good(), ErrorKind::io, path + ": truncated data chunk");
      return samples;
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  fail(ErrorKind::io, path + ": no data chunk found");
}

void write_wav(const std::string& path, const std::vector<std::int16_t>& samples, int rate) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot open " + path + " for writing");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<std::uint32_t>(rate));
  write_u32(out, static_cast<std::uint32_t>(rate * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (const std::int16_t s : samples) {
    const char b[2] = {static_cast<char>(s & 0xFF), static_cast<char>((s >> 8) & 0xFF)};
    out.write(b, 2);
  }
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

}  // namespace takin::audio
