#include "dagh/retrieval.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace dagh {

PackedCodes::PackedCodes(std::size_t n, int k) : n_(n), k_(k) {
  if (k < 1) throw InvalidInput("packed codes need k >= 1");
  bytes_.assign(n * row_bytes(), 0);
}

PackedCodes::PackedCodes(std::size_t n, int k, std::vector<std::uint8_t> bytes)
    : n_(n), k_(k), bytes_(std::move(bytes)) {
  if (k < 1) throw InvalidInput("packed codes need k >= 1");
  if (bytes_.size() != n * row_bytes())
    throw InvalidInput("packed codes: payload size does not match n * ceil(k/8)");
  const int pad = static_cast<int>(row_bytes() * 8) - k;
  if (pad > 0) {
    const auto mask = static_cast<std::uint8_t>(0xFFu << (8 - pad));
    for (std::size_t i = 0; i < n; ++i)
      if (row(i)[row_bytes() - 1] & mask) throw InvalidInput("packed codes: non-zero pad bits");
  }
}

PackedCodes pack(const CodeMatrix& codes) {
  PackedCodes out(static_cast<std::size_t>(codes.rows()), static_cast<int>(codes.cols()));
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    std::uint8_t* row = out.row(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < codes.cols(); ++j) {
      const auto v = codes(i, j);
      if (v != 1 && v != -1) throw InvalidInput("pack: code entries must be -1 or +1");
      if (v == 1) row[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
    }
  }
  return out;
}

CodeMatrix unpack(const PackedCodes& packed) {
  CodeMatrix out(static_cast<Eigen::Index>(packed.size()), packed.code_length());
  for (std::size_t i = 0; i < packed.size(); ++i) {
    const std::uint8_t* row = packed.row(i);
    for (int j = 0; j < packed.code_length(); ++j)
      out(static_cast<Eigen::Index>(i), j) = (row[j / 8] >> (j % 8)) & 1u ? 1 : -1;
  }
  return out;
}

int packed_distance(const std::uint8_t* a, const std::uint8_t* b, std::size_t row_bytes) {
  int d = 0;
  std::size_t i = 0;
  for (; i + 8 <= row_bytes; i += 8) {
    std::uint64_t wa, wb;
    std::memcpy(&wa, a + i, 8);
    std::memcpy(&wb, b + i, 8);
    d += std::popcount(wa ^ wb);
  }
  for (; i < row_bytes; ++i) d += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  return d;
}

namespace {

PackedCodes pack_query(const BinaryCode& query, const PackedCodes& gallery) {
  if (query.size() != gallery.code_length())
    throw InvalidInput("query length " + std::to_string(query.size()) +
                       " does not match gallery code length " +
                       std::to_string(gallery.code_length()));
  return pack(query.transpose());
}

}  // namespace

std::vector<int> gallery_distances(const BinaryCode& query, const PackedCodes& gallery) {
  const PackedCodes q = pack_query(query, gallery);
  std::vector<int> out(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g)
    out[g] = packed_distance(q.row(0), gallery.row(g), gallery.row_bytes());
  return out;
}

RankingResult rank_gallery(const BinaryCode& query, const PackedCodes& gallery,
                           std::int64_t query_id) {
  const auto dist = gallery_distances(query, gallery);
  // counting sort over distances 0..K keeps ids ascending within a bucket
  std::vector<std::size_t> start(static_cast<std::size_t>(gallery.code_length()) + 2, 0);
  for (int d : dist) ++start[static_cast<std::size_t>(d) + 1];
  for (std::size_t i = 1; i < start.size(); ++i) start[i] += start[i - 1];
  RankingResult out;
  out.query_id = query_id;
  out.ids.resize(dist.size());
  out.distances.resize(dist.size());
  for (std::size_t g = 0; g < dist.size(); ++g) {
    const std::size_t slot = start[static_cast<std::size_t>(dist[g])]++;
    out.ids[slot] = static_cast<std::int64_t>(g);
    out.distances[slot] = dist[g];
  }
  return out;
}

std::vector<std::int64_t> within_radius(const BinaryCode& query, const PackedCodes& gallery,
                                        int r) {
  if (r < 0 || r > gallery.code_length())
    throw InvalidInput("within_radius: radius " + std::to_string(r) + " outside [0, " +
                       std::to_string(gallery.code_length()) + "]");
  const auto dist = gallery_distances(query, gallery);
  std::vector<std::int64_t> out;
  for (std::size_t g = 0; g < dist.size(); ++g)
    if (dist[g] <= r) out.push_back(static_cast<std::int64_t>(g));
  return out;
}

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'A', 'G', 'H'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  std::array<unsigned char, sizeof(T)> buf;
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> buf;
  if (!in.read(reinterpret_cast<char*>(buf.data()), buf.size()))
    throw IoError("truncated code file header in " + path.string());
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_codes(const std::filesystem::path& path, const PackedCodes& codes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write code file " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(codes.code_length()));
  put_le<std::uint64_t>(out, codes.size());
  out.write(reinterpret_cast<const char*>(codes.bytes().data()),
            static_cast<std::streamsize>(codes.bytes().size()));
  if (!out) throw IoError("failed writing code file " + path.string());
}

PackedCodes read_codes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open code file " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw IoError(path.string() + " is not a DAGH code file (bad magic)");
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kVersion)
    throw IoError(path.string() + ": unsupported code file version " + std::to_string(version));
  const auto k = get_le<std::uint32_t>(in, path);
  const auto n = get_le<std::uint64_t>(in, path);
  if (k == 0) throw IoError(path.string() + ": code length is zero");
  std::vector<std::uint8_t> bytes(n * ((k + 7) / 8));
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw IoError(path.string() + ": truncated payload");
  if (in.peek() != std::char_traits<char>::eof())
    throw IoError(path.string() + ": trailing bytes after payload");
  try {
    return PackedCodes(n, static_cast<int>(k), std::move(bytes));
  } catch (const InvalidInput& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace dagh
