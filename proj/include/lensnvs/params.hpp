#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lensnvs/random.hpp"
#include "lensnvs/tensor.hpp"

namespace lensnvs::nn {

/// Named learnable parameters plus their Adam moments.
///
/// Parameter values are kept representable in float32 (rounded at creation
/// and after every update) so a float32 checkpoint round-trips them exactly.
class ParamStore {
 public:
  struct Entry {
    Tensor param;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
  };

  /// Creates a parameter with Xavier-uniform values in
  /// ±sqrt(6 / (fan_in + fan_out)). Throws if the name exists.
  Tensor& create_xavier(const std::string& name, Shape shape, int fan_in, int fan_out, Rng& rng);
  /// Creates a parameter filled with `value`.
  Tensor& create_constant(const std::string& name, Shape shape, double value);
  /// Creates a parameter from explicit values.
  Tensor& create(const std::string& name, Shape shape, std::vector<double> values);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  /// Names in sorted order.
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  bool empty() const { return entries_.empty(); }

  void zero_grad();

  /// Number of optimizer updates applied so far.
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

 private:
  std::map<std::string, Entry> entries_;
  std::int64_t step_ = 0;
};

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter that has a gradient, then
/// clears gradients. Throws (naming the parameter) on a non-finite gradient,
/// before modifying anything.
void adam_step(ParamStore& store, const AdamOptions& options);

/// Exponential decay from `initial` to 10% of it over `total_steps`.
double decayed_learning_rate(double initial, std::int64_t step, std::int64_t total_steps);

/// Binary checkpoint: magic "LNVSCKPT", u32 version, u64 global step, metadata
/// text, then a name-sorted table of (name, shape, float32 values) and the
/// Adam state (float64 moments). All integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const std::string& metadata = {});

struct LoadedCheckpoint {
  std::string metadata;
  std::int64_t step = 0;
};

/// Loads into `store`. An empty store is populated from the file; a populated
/// store must match the file's names and shapes exactly.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParamStore& store);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace lensnvs::nn
