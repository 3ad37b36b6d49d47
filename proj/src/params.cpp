#include "aman/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "aman/io.hpp"

namespace aman {

Tensor& TensorMap::add(const std::string& name, Tensor value) {
  auto [it, inserted] = entries_.emplace(name, std::move(value));
  if (!inserted) throw ContractError("duplicate parameter name: " + name);
  return it->second;
}

const Tensor& TensorMap::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

Tensor& TensorMap::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

std::size_t TensorMap::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void sgd_step(ModelParams& params, const Gradients& grads, Real lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ContractError("learning rate must be a finite non-negative number");
  }
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ContractError("gradient for unknown parameter " + name);
    Tensor& p = params.at(name);
    if (p.shape() != g.shape()) {
      throw ContractError("gradient shape " + shape_str(g.shape()) + " does not match parameter " +
                          name + " " + shape_str(p.shape()));
    }
    auto pd = p.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < pd.size(); ++i) pd[i] -= lr * gd[i];
  }
}

void accumulate(Gradients& into, const Gradients& g, Real scale) {
  for (const auto& [name, t] : g) {
    if (!into.contains(name)) into.add(name, Tensor(t.shape()));
    Tensor& dst = into.at(name);
    if (dst.shape() != t.shape()) throw DimensionError("accumulate: shape mismatch for " + name);
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] += scale * t[i];
  }
}

Real global_norm(const Gradients& g) {
  Real s = 0;
  for (const auto& [_, t] : g) {
    for (Real v : t.data()) s += v * v;
  }
  return std::sqrt(s);
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng, Real gain) {
  const Real s = gain / std::sqrt(static_cast<Real>(std::max<std::size_t>(fan_in, 1)));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-s, s);
  return t;
}

namespace {

constexpr char kMagic[8] = {'A', 'M', 'A', 'N', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  std::string& buffer() { return buf_; }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IntegrityError("checkpoint truncated");
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const CheckpointManifest& manifest) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(manifest.format_version);
  w.u64(manifest.seed);
  w.u32(static_cast<std::uint32_t>(manifest.metadata.size()));
  for (const auto& [k, v] : manifest.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    for (Real v : t.data()) w.f64(v);
  }
  const auto checksum = fnv1a(w.buffer());
  w.u64(checksum);
  write_file_atomic(path, w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError("not a checkpoint file: " + path.string());
  }
  const std::string_view body(bytes.data(), bytes.size() - 8);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.u64() != fnv1a(body)) throw IntegrityError("checkpoint checksum mismatch: " + path.string());

  Reader r(body);
  r.raw(sizeof(kMagic));
  Checkpoint ck;
  ck.manifest.format_version = r.u32();
  if (ck.manifest.format_version != CheckpointManifest::kFormatVersion) {
    throw IntegrityError("unsupported checkpoint format version " +
                         std::to_string(ck.manifest.format_version));
  }
  ck.manifest.seed = r.u64();
  const auto nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = r.str();
    ck.manifest.metadata[k] = r.str();
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw IntegrityError("bad rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    const auto n = shape_numel(shape);
    if (n == 0 || n > (std::size_t{1} << 34)) throw IntegrityError("bad shape for " + name);
    std::vector<Real> data(n);
    for (auto& v : data) v = r.f64();
    ck.params.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw IntegrityError("trailing bytes in checkpoint");
  return ck;
}

}  // namespace aman
