#include "cct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <type_traits>

#include "cct/errors.hpp"

namespace cct {
namespace {

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 1 : 2;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot open checkpoint for writing: " + path.string());
  }

  template <typename U>
  void uint(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), sizeof(U));
  }

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  void string(const std::string& s) {
    uint<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  template <typename T>
  void tensor(const std::string& name, const Tensor<T>& t) {
    string(name);
    uint<std::uint8_t>(dtype_code<T>());
    uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d : t.shape()) uint<std::uint64_t>(static_cast<std::uint64_t>(d));
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if constexpr (std::endian::native == std::endian::little) {
      bytes(t.data().data(), t.data().size_bytes());
    } else {
      for (T v : t.data()) uint<Bits>(std::bit_cast<Bits>(v));
    }
  }

  void finish() {
    out_.flush();
    if (!out_) throw IoError("failed writing checkpoint " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw CheckpointError("truncated checkpoint " + path_.string());
  }

  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string string() {
    const auto n = uint<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  std::pair<std::string, Tensor<T>> tensor() {
    std::string name = string();
    const auto dtype = uint<std::uint8_t>();
    if (dtype != dtype_code<T>()) {
      throw CheckpointError("tensor '" + name + "' has dtype code " + std::to_string(dtype) +
                            ", expected " + std::to_string(dtype_code<T>()));
    }
    const auto rank = uint<std::uint32_t>();
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = uint<std::uint64_t>();
      if (d == 0 || d > (std::uint64_t{1} << 40)) throw CheckpointError("tensor '" + name + "' has invalid dims");
      count *= d;
      shape.push_back(static_cast<std::int64_t>(d));
    }
    need(count * sizeof(T));
    std::vector<T> data(count);
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if constexpr (std::endian::native == std::endian::little) {
      raw(data.data(), count * sizeof(T));
    } else {
      for (T& v : data) v = std::bit_cast<T>(uint<Bits>());
    }
    return {std::move(name), Tensor<T>(std::move(shape), std::move(data))};
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::filesystem::path path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
  KeyValueConfig config = ckpt.extras;
  put_model_config(config, ckpt.model);
  put_adamw_hyper(config, ckpt.optimizer);

  Writer w(path);
  w.bytes(kCheckpointMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.string(config.serialize());
  w.uint<std::uint64_t>(ckpt.seed);
  w.uint<std::uint64_t>(ckpt.epoch);
  w.uint<std::uint64_t>(ckpt.step);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) w.tensor(name, t);
  w.uint<std::uint8_t>(ckpt.optimizer_state ? 1 : 0);
  if (ckpt.optimizer_state) {
    const auto& s = *ckpt.optimizer_state;
    w.uint<std::uint64_t>(static_cast<std::uint64_t>(s.step));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(s.m.size()));
    for (const auto& [name, m] : s.m) {
      w.tensor(name, m);
      w.tensor(name, s.v.at(name));
    }
  }
  w.finish();
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint<T> ckpt;
  KeyValueConfig config = KeyValueConfig::parse(r.string(), path.string());
  ckpt.model = model_config_from(config);
  ckpt.optimizer = adamw_hyper_from(config);
  for (const auto& k : model_config_keys()) config.erase(k);
  for (const auto& k : adamw_hyper_keys()) config.erase(k);
  ckpt.extras = std::move(config);
  ckpt.seed = r.uint<std::uint64_t>();
  ckpt.epoch = r.uint<std::uint64_t>();
  ckpt.step = r.uint<std::uint64_t>();

  const auto layout = canonical_param_layout(ckpt.model);
  const auto n = r.uint<std::uint32_t>();
  if (n != layout.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(n) + " tensors but the config defines " +
                          std::to_string(layout.size()));
  }
  for (const auto& [want_name, want_shape] : layout) {
    auto [name, t] = r.tensor<T>();
    if (name != want_name) {
      throw CheckpointError("checkpoint tensor '" + name + "' where '" + want_name + "' was expected");
    }
    if (t.shape() != want_shape) {
      throw CheckpointError("checkpoint tensor '" + name + "' has shape " + to_string(t.shape()) +
                            ", expected " + to_string(want_shape));
    }
    t.set_requires_grad(true);
    ckpt.params.insert(std::move(name), std::move(t));
  }
  if (r.uint<std::uint8_t>() != 0) {
    AdamWState<T> s;
    s.step = static_cast<std::int64_t>(r.uint<std::uint64_t>());
    const auto count = r.uint<std::uint32_t>();
    if (count != layout.size()) throw CheckpointError("optimizer state does not cover every parameter");
    for (const auto& [want_name, want_shape] : layout) {
      auto [mname, m] = r.tensor<T>();
      auto [vname, v] = r.tensor<T>();
      if (mname != want_name || vname != want_name || m.shape() != want_shape || v.shape() != want_shape) {
        throw CheckpointError("optimizer state entry '" + mname + "' does not match parameter '" + want_name + "'");
      }
      s.m.insert(std::move(mname), std::move(m));
      s.v.insert(std::move(vname), std::move(v));
    }
    ckpt.optimizer_state = std::move(s);
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint payload in " + path.string());
  return ckpt;
}

template void save_checkpoint(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace cct
