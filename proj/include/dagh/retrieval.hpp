#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "dagh/errors.hpp"
#include "dagh/hashnet.hpp"

namespace dagh {

/// Number of positions where two {-1,+1} codes differ.
template <typename A, typename B>
int hamming_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size())
    throw InvalidInput("hamming_distance: lengths " + std::to_string(a.size()) + " and " +
                       std::to_string(b.size()) + " differ");
  int d = 0;
  for (Eigen::Index k = 0; k < a.size(); ++k) d += (a.derived().coeff(k) != b.derived().coeff(k));
  return d;
}

/// Row-major bit-packed codes: bit j of row i lives in byte j / 8 of the
/// row at position j % 8 (LSB first); bit 1 encodes +1. Pad bits are zero.
class PackedCodes {
 public:
  PackedCodes() = default;
  PackedCodes(std::size_t n, int k);
  PackedCodes(std::size_t n, int k, std::vector<std::uint8_t> bytes);

  std::size_t size() const { return n_; }
  int code_length() const { return k_; }
  std::size_t row_bytes() const { return static_cast<std::size_t>(k_ + 7) / 8; }
  const std::uint8_t* row(std::size_t i) const { return bytes_.data() + i * row_bytes(); }
  std::uint8_t* row(std::size_t i) { return bytes_.data() + i * row_bytes(); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  friend bool operator==(const PackedCodes&, const PackedCodes&) = default;

 private:
  std::size_t n_ = 0;
  int k_ = 0;
  std::vector<std::uint8_t> bytes_;
};

PackedCodes pack(const CodeMatrix& codes);
CodeMatrix unpack(const PackedCodes& packed);

/// XOR + popcount over two packed rows of `row_bytes` bytes.
int packed_distance(const std::uint8_t* a, const std::uint8_t* b, std::size_t row_bytes);

struct RankingResult {
  std::int64_t query_id = 0;
  std::vector<std::int64_t> ids;
  std::vector<int> distances;
};

/// All gallery distances for one packed query row, in gallery order.
std::vector<int> gallery_distances(const BinaryCode& query, const PackedCodes& gallery);

/// Full gallery ordering by Hamming distance, ties by ascending gallery id.
RankingResult rank_gallery(const BinaryCode& query, const PackedCodes& gallery,
                           std::int64_t query_id = 0);

/// Gallery ids within Hamming radius r, ascending.
std::vector<std::int64_t> within_radius(const BinaryCode& query, const PackedCodes& gallery, int r);

/// Binary code file: "DAGH", u32 version = 1, u32 k, u64 n, then the packed
/// rows. All integers little-endian.
void write_codes(const std::filesystem::path& path, const PackedCodes& codes);
PackedCodes read_codes(const std::filesystem::path& path);

}  // namespace dagh
