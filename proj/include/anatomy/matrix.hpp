#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace anatomy {

// Dense row-major float32 matrix; the in-memory form of an LTXT file.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}
  EmbeddingMatrix(std::size_t r, std::size_t c, std::vector<float> v);

  float& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const float> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  // Throws ValidationError on empty shape or non-finite entries.
  void validate() const;
};

// LTXT layout: "LTXT", u32 version (1), u64 rows, u64 cols, then rows*cols
// little-endian float32 values in row-major order.
inline constexpr std::uint32_t kLtxtVersion = 1;

EmbeddingMatrix read_ltxt(std::istream& in);
EmbeddingMatrix read_ltxt(const std::filesystem::path& path);
void write_ltxt(std::ostream& out, const EmbeddingMatrix& m);
void write_ltxt(const std::filesystem::path& path, const EmbeddingMatrix& m);

}  // namespace anatomy
