#include "saliency_audit/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace sa::io {
namespace {

constexpr std::array<char, 4> kMagic{'S', 'A', 'T', 'N'};

static_assert(std::endian::native == std::endian::little,
              "tensor I/O assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw InvalidInput("tensor file: truncated header");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, std::span<const std::uint32_t> dims,
                  std::span<const float> data) {
  if (dims.size() > 255) throw InvalidInput("tensor rank exceeds 255");
  std::size_t count = 1;
  for (auto d : dims) count *= d;
  if (count != data.size()) throw InvalidInput("tensor dims do not match payload size");
  out.write(kMagic.data(), kMagic.size());
  const auto rank = static_cast<std::uint8_t>(dims.size());
  out.put(static_cast<char>(rank));
  for (auto d : dims) put_u32(out, d);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
}

RawTensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidInput("tensor file: bad magic");
  const int rank = in.get();
  if (rank == std::char_traits<char>::eof()) throw InvalidInput("tensor file: missing rank");
  RawTensor t;
  std::size_t count = 1;
  for (int i = 0; i < rank; ++i) {
    t.dims.push_back(get_u32(in));
    count *= t.dims.back();
  }
  t.data.resize(count);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw InvalidInput("tensor file: truncated payload");
  return t;
}

void save_tensor(const std::filesystem::path& path, const RawTensor& t) {
  std::ostringstream buf(std::ios::binary);
  write_tensor(buf, t.dims, t.data);
  const std::string bytes = buf.str();
  write_file_atomic(path, bytes);
}

RawTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open tensor file " + path.string());
  return read_tensor(in);
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  RawTensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());  // narrows to float32
  save_tensor(path, t);
}

Matrix load_matrix(const std::filesystem::path& path) {
  const RawTensor t = load_tensor(path);
  if (t.dims.size() != 2) throw InvalidInput("expected a rank-2 tensor in " + path.string());
  Matrix m(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < t.data.size(); ++i) m.data()[i] = t.data[i];
  return m;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace sa::io
