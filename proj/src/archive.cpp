#include "dedgan/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dedgan/errors.hpp"

namespace dedgan {

namespace {

static_assert(std::endian::native == std::endian::little, "archive codec assumes a little-endian host");

void write_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(const std::string& blob, const std::string& source) : blob_(blob), source_(source) {}

  bool done() const { return pos_ == blob_.size(); }

  void read(void* dst, std::size_t n, const char* what) {
    if (blob_.size() - pos_ < n)
      throw CheckpointError(source_ + ": truncated archive while reading " + what + " at byte " +
                            std::to_string(pos_));
    std::memcpy(dst, blob_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    read(&v, 4, what);
    return v;
  }

 private:
  const std::string& blob_;
  std::string source_;
  std::size_t pos_ = 0;
};

TensorF limbs_from_u64(const std::vector<std::uint64_t>& values) {
  const Index n = static_cast<Index>(values.size());
  TensorF t(Shape{std::max<Index>(n, 1), 4});
  if (n == 0) t = TensorF(Shape{1, 4}, -1.0f);  // marks an empty list
  for (Index i = 0; i < n; ++i)
    for (Index l = 0; l < 4; ++l)
      t.at(i, l) = static_cast<float>((values[static_cast<std::size_t>(i)] >> (16 * l)) & 0xFFFFu);
  return t;
}

std::vector<std::uint64_t> u64_from_limbs(const TensorF& t, const std::string& name) {
  if (t.rank() != 2 || t.dim(1) != 4) throw CheckpointError("archive: entry '" + name + "' is not a limb table");
  if (t.dim(0) == 1 && t.at(0, 0) < 0) return {};
  std::vector<std::uint64_t> out(static_cast<std::size_t>(t.dim(0)));
  for (Index i = 0; i < t.dim(0); ++i) {
    std::uint64_t v = 0;
    for (Index l = 0; l < 4; ++l) {
      const float limb = t.at(i, l);
      if (!(limb >= 0 && limb <= 65535 && limb == static_cast<float>(static_cast<std::uint32_t>(limb))))
        throw CheckpointError("archive: entry '" + name + "' holds an invalid limb");
      v |= static_cast<std::uint64_t>(limb) << (16 * l);
    }
    out[static_cast<std::size_t>(i)] = v;
  }
  return out;
}

}  // namespace

void Archive::put(const std::string& name, const TensorF& t) {
  if (name.empty()) throw CheckpointError("archive: empty entry name");
  if (!index_.count(name)) order_.push_back(name);
  index_[name] = t;
}

void Archive::put_u64(const std::string& name, const std::vector<std::uint64_t>& values) {
  put(name + "@u64", limbs_from_u64(values));
}

void Archive::put_f64(const std::string& name, const std::vector<double>& values) {
  std::vector<std::uint64_t> bits;
  bits.reserve(values.size());
  for (double v : values) bits.push_back(std::bit_cast<std::uint64_t>(v));
  put(name + "@f64", limbs_from_u64(bits));
}

void Archive::put_bytes(const std::string& name, const std::string& bytes) {
  TensorF t(Shape{static_cast<Index>(bytes.size()) + 1});
  t[0] = static_cast<float>(bytes.size() % 65536);  // leading length check value
  for (std::size_t i = 0; i < bytes.size(); ++i)
    t[static_cast<Index>(i) + 1] = static_cast<float>(static_cast<unsigned char>(bytes[i]));
  put(name + "@bytes", t);
}

const TensorF& Archive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError("archive: missing entry '" + name + "'");
  return it->second;
}

std::vector<std::uint64_t> Archive::get_u64(const std::string& name) const {
  return u64_from_limbs(get(name + "@u64"), name);
}

std::uint64_t Archive::get_u64_scalar(const std::string& name) const {
  auto v = get_u64(name);
  if (v.size() != 1) throw CheckpointError("archive: entry '" + name + "' is not a scalar");
  return v[0];
}

std::vector<double> Archive::get_f64(const std::string& name) const {
  std::vector<double> out;
  for (std::uint64_t b : u64_from_limbs(get(name + "@f64"), name)) out.push_back(std::bit_cast<double>(b));
  return out;
}

double Archive::get_f64_scalar(const std::string& name) const {
  auto v = get_f64(name);
  if (v.size() != 1) throw CheckpointError("archive: entry '" + name + "' is not a scalar");
  return v[0];
}

std::string Archive::get_bytes(const std::string& name) const {
  const TensorF& t = get(name + "@bytes");
  if (t.rank() != 1 || t.size() < 1 || t[0] != static_cast<float>((t.size() - 1) % 65536))
    throw CheckpointError("archive: entry '" + name + "' is not a byte string");
  std::string out(static_cast<std::size_t>(t.size() - 1), '\0');
  for (Index i = 1; i < t.size(); ++i) out[static_cast<std::size_t>(i - 1)] = static_cast<char>(static_cast<int>(t[i]));
  return out;
}

std::string Archive::serialize() const {
  std::string out(kMagic, 8);
  write_u32(out, kVersion);
  for (const auto& name : order_) {
    const TensorF& t = index_.at(name);
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  return out;
}

Archive Archive::deserialize(const std::string& blob, const std::string& source) {
  Reader r(blob, source);
  char magic[8];
  r.read(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError(source + ": bad magic header (expected DEDGANCK, found '" + std::string(magic, 8) + "')");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw CheckpointError(source + ": unsupported archive version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
  Archive a;
  while (!r.done()) {
    const std::uint32_t len = r.u32("name length");
    if (len == 0 || len > 4096) throw CheckpointError(source + ": corrupt entry name length " + std::to_string(len));
    std::string name(len, '\0');
    r.read(name.data(), len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw CheckpointError(source + ": corrupt rank for '" + name + "'");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = r.u32("dimension");
      if (d == 0) throw CheckpointError(source + ": zero dimension for '" + name + "'");
      total *= static_cast<std::uint64_t>(d);
      if (total > (std::uint64_t{1} << 34)) throw CheckpointError(source + ": oversized entry '" + name + "'");
    }
    TensorF t(shape);
    r.read(t.data(), static_cast<std::size_t>(total) * sizeof(float), name.c_str());
    if (a.contains(name)) throw CheckpointError(source + ": duplicate entry '" + name + "'");
    a.put(name, t);
  }
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + tmp + "' for writing");
    const std::string blob = serialize();
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw CheckpointError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open archive '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str(), path.string());
}

}  // namespace dedgan
