#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dsm/common.hpp"

namespace dsm {

// Named learnable tensor with parallel gradient storage.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Flat named collection of learnable tensors. Tensors are heap-allocated so
// borrowed Tensor* stay valid while the set grows.
class ParamSet {
 public:
  Tensor& add(const std::string& name, const std::vector<int>& shape);

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  // Like find but throws ArgumentError when the tensor is missing.
  Tensor& require(const std::string& name);
  const Tensor& require(const std::string& name) const;

  void zero_grad();
  bool values_finite() const;
  bool grads_finite() const;
  ParamSet clone() const;
  std::size_t tensor_count() const { return tensors_.size(); }
  Tensor& tensor(std::size_t i) { return *tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return *tensors_[i]; }

 private:
  std::vector<std::unique_ptr<Tensor>> tensors_;
};

// He-style uniform fill on [-sqrt(6/fan_in), sqrt(6/fan_in)].
void fill_he_uniform(Tensor& t, int fan_in, Rng& rng);

// Versioned binary container: magic "DSMCKPT1", then per-tensor records of
// name length, name, rank, dims (little-endian u32) and little-endian 8-byte
// floats for the values. Gradients are not serialized.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace dsm
