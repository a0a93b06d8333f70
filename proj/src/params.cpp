#include "lensnvs/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lensnvs::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'L', 'N', 'V', 'S', 'C', 'K', 'P', 'T'};

double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error(path.string() + ": truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in, const std::filesystem::path& path, std::uint32_t max_len) {
  const auto len = get<std::uint32_t>(in, path);
  if (len > max_len) throw std::runtime_error(path.string() + ": corrupt checkpoint string length");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw std::runtime_error(path.string() + ": truncated checkpoint");
  return s;
}

}  // namespace

Tensor& ParamStore::create(const std::string& name, Shape shape, std::vector<double> values) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  for (double& v : values) v = to_float32(v);
  Entry e;
  e.param = Tensor::parameter(std::move(shape), std::move(values));
  e.first_moment.assign(e.param.numel(), 0.0);
  e.second_moment.assign(e.param.numel(), 0.0);
  return entries_.emplace(name, std::move(e)).first->second.param;
}

Tensor& ParamStore::create_xavier(const std::string& name, Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return create(name, std::move(shape), std::move(values));
}

Tensor& ParamStore::create_constant(const std::string& name, Shape shape, double value) {
  const auto n = numel(shape);
  return create(name, std::move(shape), std::vector<double>(n, value));
}

const Tensor& ParamStore::get(const std::string& name) const { return entry(name).param; }
Tensor& ParamStore::get(const std::string& name) { return entry(name).param; }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.param.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) e.param.zero_grad();
}

void adam_step(ParamStore& store, const AdamOptions& options) {
  for (const auto& name : store.names()) {
    const Tensor& p = store.get(name);
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient in parameter '" + name + "'");
    }
  }
  const std::int64_t t = store.step() + 1;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));
  for (const auto& name : store.names()) {
    auto& e = store.entry(name);
    if (!e.param.has_grad()) continue;
    auto values = e.param.mutable_values();
    auto grad = e.param.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      e.first_moment[i] = options.beta1 * e.first_moment[i] + (1.0 - options.beta1) * grad[i];
      e.second_moment[i] = options.beta2 * e.second_moment[i] + (1.0 - options.beta2) * grad[i] * grad[i];
      const double m_hat = e.first_moment[i] / c1;
      const double v_hat = e.second_moment[i] / c2;
      values[i] = to_float32(values[i] - options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
    }
  }
  store.set_step(t);
  store.zero_grad();
}

double decayed_learning_rate(double initial, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return initial;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return initial * std::pow(0.1, frac);
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(store.step()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  const auto names = store.names();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(names.size()));
  for (const auto& name : names) {
    const Tensor& p = store.get(name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (int d : p.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p.values()) put<float>(out, static_cast<float>(v));
  }
  for (const auto& name : names) {
    const auto& e = store.entry(name);
    for (double v : e.first_moment) put<double>(out, v);
    for (double v : e.second_moment) put<double>(out, v);
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  LoadedCheckpoint result;
  result.step = static_cast<std::int64_t>(get<std::uint64_t>(in, path));
  result.metadata = get_string(in, path, 1u << 20);
  const auto count = get<std::uint32_t>(in, path);

  struct Record {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    r.name = get_string(in, path, 4096);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw std::runtime_error(path.string() + ": corrupt rank");
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<int>(get<std::uint32_t>(in, path)));
    r.values.resize(numel(r.shape));
    for (double& v : r.values) v = get<float>(in, path);
    records.push_back(std::move(r));
  }

  const bool populate = store.empty();
  if (!populate) {
    if (store.size() != records.size()) {
      throw std::runtime_error(path.string() + ": checkpoint has " + std::to_string(records.size()) +
                               " parameters, model expects " + std::to_string(store.size()));
    }
    for (const auto& r : records) {
      if (!store.contains(r.name)) throw std::runtime_error(path.string() + ": unexpected parameter '" + r.name + "'");
      if (store.get(r.name).shape() != r.shape) {
        throw std::runtime_error(path.string() + ": shape mismatch for '" + r.name + "': file " +
                                 shape_string(r.shape) + ", model " + shape_string(store.get(r.name).shape()));
      }
    }
  }
  for (auto& r : records) {
    if (populate) {
      store.create(r.name, r.shape, r.values);
    } else {
      auto dst = store.get(r.name).mutable_values();
      std::copy(r.values.begin(), r.values.end(), dst.begin());
    }
  }
  for (const auto& r : records) {
    auto& e = store.entry(r.name);
    for (double& v : e.first_moment) v = get<double>(in, path);
    for (double& v : e.second_moment) v = get<double>(in, path);
  }
  store.set_step(result.step);
  store.zero_grad();
  return result;
}

}  // namespace lensnvs::nn
