#include "tad/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace tad {

static const char kMagic[8] = {'T', 'A', 'D', 'T', 'N', 'S', 'R', '1'};
static const int64_t kMaxRank = 8;

// serialized little-endian; this codebase targets little-endian hosts and
// the loaders verify the magic, so a mismatch fails loudly rather than
// silently byte-swapping
static void put_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 8);
}

static std::uint64_t get_u64(std::ifstream& f, const std::string& path) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  if (!f) throw IoError(path + ": truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void save_tensor(const std::string& path, const Tensor& t) {
  if (!t.defined()) throw IoError(path + ": cannot save undefined tensor");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(kMagic, 8);
  put_u64(f, std::uint64_t(t.rank()));
  for (int i = 0; i < int(t.rank()); ++i) put_u64(f, std::uint64_t(t.dim(i)));
  static_assert(sizeof(double) == 8);
  f.write(reinterpret_cast<const char*>(t.data()),
          std::streamsize(t.numel() * 8));
  if (!f) throw IoError(path + ": write failed");
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(path + ": bad magic, not a tensor file");
  std::uint64_t rank = get_u64(f, path);
  if (rank == 0 || int64_t(rank) > kMaxRank)
    throw IoError(path + ": unreasonable rank " + std::to_string(rank));
  Shape s(static_cast<size_t>(rank));
  for (auto& e : s) {
    e = int64_t(get_u64(f, path));
    if (e <= 0) throw IoError(path + ": non-positive extent");
  }
  Tensor t = Tensor::zeros(s);
  f.read(reinterpret_cast<char*>(t.mut_data()), std::streamsize(t.numel() * 8));
  if (!f) throw IoError(path + ": truncated data section");
  // reject trailing bytes so corrupt files cannot pass
  f.peek();
  if (!f.eof()) throw IoError(path + ": trailing bytes after tensor data");
  return t;
}

}  // namespace tad
