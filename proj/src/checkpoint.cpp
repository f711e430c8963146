#include "bonenet/checkpoint.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bonenet/error.hpp"

namespace bonenet {

namespace {

constexpr char kMagic[8] = {'B', 'A', 'A', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string origin) : buf_(std::move(buf)), origin_(std::move(origin)) {}
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorCode::FormatError, origin_ + ": truncated checkpoint");
  }
  std::vector<char> buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

Fingerprint sha256(std::string_view bytes) {
  Fingerprint fp{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), fp.data());
  return fp;
}

std::string to_hex(const Fingerprint& fp) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  for (auto b : fp) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Fingerprint& fingerprint,
                      const std::vector<const Parameter*>& params, const std::string& meta_json) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint16_t>(Checkpoint::kVersion);
  w.bytes(fingerprint.data(), fingerprint.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    if (p->name.size() > 0xffff) throw Error(ErrorCode::FormatError, "parameter name too long");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p->value.data()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta_json.size()));
  w.bytes(meta_json.data(), meta_json.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()), path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw Error(ErrorCode::FormatError, path.string() + ": not a checkpoint");
  const auto version = r.le<std::uint16_t>();
  if (version != Checkpoint::kVersion)
    throw Error(ErrorCode::FormatError, path.string() + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  r.bytes(ck.fingerprint.data(), ck.fingerprint.size());
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.le<std::uint16_t>(), '\0');
    r.bytes(name.data(), name.size());
    const auto rank = r.le<std::uint8_t>();
    if (rank == 0) throw Error(ErrorCode::FormatError, path.string() + ": zero-rank tensor " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>();
    for (auto d : shape)
      if (d == 0) throw Error(ErrorCode::FormatError, path.string() + ": zero dimension in " + name);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>()));
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  ck.meta_json.resize(r.le<std::uint32_t>());
  r.bytes(ck.meta_json.data(), ck.meta_json.size());
  if (!r.at_end()) throw Error(ErrorCode::FormatError, path.string() + ": trailing bytes");
  return ck;
}

bool is_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  return in.gcount() == sizeof magic && std::memcmp(magic, kMagic, sizeof kMagic) == 0;
}

void round_to_f32(const std::vector<Parameter*>& params) {
  for (auto* p : params)
    for (auto& v : p->value.data()) v = static_cast<double>(static_cast<float>(v));
}

void load_parameters(const Checkpoint& ckpt, const std::vector<Parameter*>& params) {
  for (auto* p : params) {
    const Tensor* t = ckpt.find(p->name);
    if (!t) throw Error(ErrorCode::FormatError, "checkpoint lacks parameter " + p->name);
    if (t->shape() != p->value.shape())
      throw Error(ErrorCode::FormatError, "checkpoint shape " + shape_str(t->shape()) + " for " + p->name +
                                              " differs from model shape " + shape_str(p->value.shape()));
    p->value = *t;
  }
}

}  // namespace bonenet
