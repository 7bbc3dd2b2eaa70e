#include "mrtlab/container_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "mrtlab/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "container i/o assumes a little-endian host");

namespace mrtlab {

namespace {

constexpr char kMagic[4] = {'M', 'R', 'T', 'L'};
constexpr std::uint32_t kVersion = 1;

void append_bytes(std::vector<char>& buf, const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  buf.insert(buf.end(), p, p + n);
}

template <typename T>
void append_pod(std::vector<char>& buf, T v) {
  append_bytes(buf, &v, sizeof(T));
}

class Reader {
 public:
  Reader(const char* data, std::size_t n) : data_(data), size_(n) {}

  void read(void* out, std::size_t n) {
    if (pos_ + n > size_) {
      throw ParseError("container: truncated file");
    }
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T read_pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }

  std::size_t pos() const { return pos_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_params(const ParamStore& params, const std::string& path) {
  std::vector<char> body;  // everything after the version field
  append_pod<std::uint64_t>(body, params.block_count());
  for (const auto& [name, block] : params.blocks()) {
    append_pod<std::uint64_t>(body, name.size());
    append_bytes(body, name.data(), name.size());
    append_pod<std::uint64_t>(body, static_cast<std::uint64_t>(block.rank));
    if (block.rank == 1) {
      append_pod<std::uint64_t>(body, static_cast<std::uint64_t>(block.value.rows()));
    } else {
      append_pod<std::uint64_t>(body, static_cast<std::uint64_t>(block.value.rows()));
      append_pod<std::uint64_t>(body, static_cast<std::uint64_t>(block.value.cols()));
    }
    append_bytes(body, block.value.data(),
                 sizeof(double) * static_cast<std::size_t>(block.value.size()));
  }
  const std::uint32_t checksum = crc32(body.data(), body.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ValidationError("container: cannot open '" + path + "' for writing");
  }
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) {
    throw ValidationError("container: write failed for '" + path + "'");
  }
}

ParamStore load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw MissingArtifact("container: cannot open '" + path + "'");
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (raw.size() < 4 + sizeof(kVersion) + sizeof(std::uint32_t)) {
    throw ParseError("container: file too short: '" + path + "'");
  }
  if (std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw ParseError("container: bad magic in '" + path + "'");
  }
  std::uint32_t version;
  std::memcpy(&version, raw.data() + 4, sizeof(version));
  if (version != kVersion) {
    throw ParseError("container: unsupported version " + std::to_string(version));
  }

  const std::size_t body_off = 4 + sizeof(kVersion);
  const std::size_t body_len = raw.size() - body_off - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, raw.data() + body_off + body_len, sizeof(stored));
  if (crc32(raw.data() + body_off, body_len) != stored) {
    throw NumericFault("container: checksum mismatch in '" + path + "'");
  }

  Reader r(raw.data() + body_off, body_len);
  const auto block_count = r.read_pod<std::uint64_t>();
  ParamStore store;
  for (std::uint64_t b = 0; b < block_count; ++b) {
    const auto name_len = r.read_pod<std::uint64_t>();
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    const auto rank = r.read_pod<std::uint64_t>();
    if (rank != 1 && rank != 2) {
      throw ParseError("container: bad rank for block '" + name + "'");
    }
    Eigen::Index rows, cols;
    if (rank == 1) {
      rows = static_cast<Eigen::Index>(r.read_pod<std::uint64_t>());
      cols = 1;
    } else {
      rows = static_cast<Eigen::Index>(r.read_pod<std::uint64_t>());
      cols = static_cast<Eigen::Index>(r.read_pod<std::uint64_t>());
    }
    Eigen::MatrixXd value(rows, cols);
    r.read(value.data(), sizeof(double) * static_cast<std::size_t>(value.size()));
    if (!value.allFinite()) {
      throw NumericFault("container: non-finite payload in block '" + name + "'");
    }
    store.add(name, std::move(value), static_cast<int>(rank));
  }
  return store;
}

}  // namespace mrtlab
