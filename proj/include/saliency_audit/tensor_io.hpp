#pragma once

// Repo-wide tensor file format:
//   "SATN" | u8 rank | rank x u32 LE dims | float32 LE row-major payload

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "saliency_audit/common.hpp"

namespace sa::io {

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void write_tensor(std::ostream& out, std::span<const std::uint32_t> dims,
                  std::span<const float> data);
RawTensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const RawTensor& t);
RawTensor load_tensor(const std::filesystem::path& path);

void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

// Writes to a sibling temp file and renames, so readers never observe a
// half-written artifact.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace sa::io
