#include "anatomy/matrix.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "anatomy/error.hpp"

namespace anatomy {
namespace {

constexpr std::array<char, 4> kMagic = {'L', 'T', 'X', 'T'};

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) {
    throw IoError(std::string("LTXT: truncated ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t r, std::size_t c, std::vector<float> v)
    : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != rows * cols) {
    throw ValidationError("matrix value count " + std::to_string(values.size()) +
                          " does not match shape " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  }
}

void EmbeddingMatrix::validate() const {
  if (rows == 0 || cols == 0) throw ValidationError("matrix must have at least one row and column");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ValidationError("non-finite value at row " + std::to_string(i / cols) + ", column " +
                            std::to_string(i % cols));
    }
  }
}

EmbeddingMatrix read_ltxt(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError("LTXT: bad magic");
  }
  auto version = get_le<std::uint32_t>(in, "version");
  if (version != kLtxtVersion) {
    throw IoError("LTXT: unsupported version " + std::to_string(version));
  }
  auto rows = get_le<std::uint64_t>(in, "rows");
  auto cols = get_le<std::uint64_t>(in, "cols");
  if (rows == 0 || cols == 0 || rows > (std::uint64_t{1} << 32) / cols) {
    throw IoError("LTXT: implausible shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  EmbeddingMatrix m(rows, cols);
  for (auto& v : m.values) v = std::bit_cast<float>(get_le<std::uint32_t>(in, "payload"));
  return m;
}

EmbeddingMatrix read_ltxt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open matrix " + path.string());
  return read_ltxt(in);
}

void write_ltxt(std::ostream& out, const EmbeddingMatrix& m) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kLtxtVersion);
  put_le<std::uint64_t>(out, m.rows);
  put_le<std::uint64_t>(out, m.cols);
  for (float v : m.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError("LTXT: write failed");
}

void write_ltxt(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write matrix " + path.string());
  write_ltxt(out, m);
}

}  // namespace anatomy
