#include "saliency_audit/dsp/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "saliency_audit/tensor_io.hpp"

namespace sa::dsp {
namespace {

void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::vector<unsigned char>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t get_u16(const std::vector<unsigned char>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::string b;
  b.reserve(44 + data_bytes);
  b += "RIFF";
  put_u32(b, 36 + data_bytes);
  b += "WAVEfmt ";
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, rate);
  put_u32(b, rate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  b += "data";
  put_u32(b, data_bytes);
  for (double s : w.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(clipped * 32767.0));
    put_u16(b, static_cast<std::uint16_t>(q));
  }
  io::write_text_atomic(path, b);
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open wav file " + path.string());
  const std::vector<unsigned char> b{std::istreambuf_iterator<char>(in), {}};
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw InvalidInput(path.string() + ": not a RIFF/WAVE file");

  Waveform w;
  bool have_fmt = false;
  std::size_t at = 12;
  while (at + 8 <= b.size()) {
    const std::string id(reinterpret_cast<const char*>(b.data() + at), 4);
    const std::uint32_t size = get_u32(b, at + 4);
    const std::size_t body = at + 8;
    if (body + size > b.size()) throw InvalidInput(path.string() + ": truncated chunk " + id);
    if (id == "fmt ") {
      if (size < 16) throw InvalidInput(path.string() + ": short fmt chunk");
      if (get_u16(b, body) != 1 || get_u16(b, body + 2) != 1 || get_u16(b, body + 14) != 16)
        throw InvalidInput(path.string() + ": only 16-bit mono PCM is supported");
      w.sample_rate = get_u32(b, body + 4);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw InvalidInput(path.string() + ": data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<std::int16_t>(get_u16(b, body + 2 * i)) / 32767.0;
      return w;
    }
    at = body + size + (size & 1);
  }
  throw InvalidInput(path.string() + ": no data chunk");
}

}  // namespace sa::dsp
