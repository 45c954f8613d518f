#include "trinet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "trinet/error.hpp"

namespace trinet {

ad::Tensor& ParameterStore::add(const std::string& name, ad::Tensor value) {
  if (params_.count(name)) throw ContractError("duplicate parameter " + name);
  value.set_track(true);
  return params_[name] = std::move(value);
}

ad::Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

const ad::Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::vector<std::string> ParameterStore::assign(const TensorMap& values, bool require_all) {
  std::vector<std::string> unused;
  for (const auto& [name, v] : values) {
    auto it = params_.find(name);
    if (it == params_.end()) {
      unused.push_back(name);
      continue;
    }
    if (it->second.shape() != v.shape()) {
      throw CheckpointError("parameter " + name + " has shape " +
                            ad::shape_str(it->second.shape()) + " but checkpoint holds " +
                            ad::shape_str(v.shape()));
    }
    auto dst = it->second.mutable_data();
    std::copy(v.data().begin(), v.data().end(), dst.begin());
  }
  if (require_all) {
    for (const auto& [name, t] : params_) {
      if (!values.count(name)) throw CheckpointError("checkpoint lacks parameter " + name);
    }
  }
  return unused;
}

TensorMap ParameterStore::snapshot() const {
  TensorMap out;
  for (const auto& [name, t] : params_) out.emplace(name, t.detach());
  return out;
}

std::uint64_t checksum(const TensorMap& tensors, std::string_view prefix) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    mix(name.data(), name.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t v = d;
      mix(&v, sizeof v);
    }
    mix(t.data().data(), t.data().size() * sizeof(double));
  }
  return h;
}

namespace checkpoint {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  template <class T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("truncated checkpoint record");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode(const TensorMap& tensors) {
  std::string out(kMagic);
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    const auto values = t.data();
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  return out;
}

TensorMap decode(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw CheckpointError("bad checkpoint magic");
  Reader r(bytes.substr(kMagic.size()));
  TensorMap out;
  while (!r.done()) {
    const auto len = r.take<std::uint32_t>();
    std::string name(r.take_bytes(len));
    const auto rank = r.take<std::uint32_t>();
    ad::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.take<std::uint64_t>());
    const std::size_t n = ad::shape_numel(shape);
    if (n > bytes.size() / sizeof(double)) throw CheckpointError("implausible tensor size in " + name);
    auto payload = r.take_bytes(n * sizeof(double));
    std::vector<double> values(n);
    std::memcpy(values.data(), payload.data(), payload.size());
    if (!out.emplace(name, ad::Tensor::from_vector(shape, std::move(values))).second) {
      throw CheckpointError("duplicate record " + name);
    }
  }
  return out;
}

void save(const std::filesystem::path& path, const TensorMap& tensors) {
  const std::string bytes = encode(tensors);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

TensorMap load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode(ss.str());
}

}  // namespace checkpoint

}  // namespace trinet
