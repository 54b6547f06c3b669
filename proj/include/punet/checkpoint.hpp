// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "punet/tensor.hpp"

namespace punet {

// One named array in a checkpoint: f64 or i64 values plus a shape.
struct CheckpointEntry {
  Shape shape;
  char dtype = 'f';  // 'f' = f64, 'i' = i64
  std::vector<double> f64;
  std::vector<i64> i64s;

  i64 numel() const { return shape_numel(shape); }
};

// Binary container with a name/dtype/shape/offset table followed by raw
// little-endian payloads. Round trips are bit-exact.
class Checkpoint {
 public:
  void put_f64(const std::string& name, Shape shape,
               std::vector<double> values);
  void put_i64(const std::string& name, Shape shape, std::vector<i64> values);
  void put_scalar(const std::string& name, double value);
  void put_int(const std::string& name, i64 value);
  void put_tensor(const std::string& name, const Tensor& t);

  bool has(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  const std::vector<double>& f64(const std::string& name) const;
  const std::vector<i64>& i64s(const std::string& name) const;
  double scalar(const std::string& name) const;
  i64 integer(const std::string& name) const;
  Tensor tensor(const std::string& name, bool requires_grad = false) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }

  // All parameters of the store, names prefixed verbatim.
  void put_params(const ParamStore& params, const std::string& prefix = "");
  // Copies values into existing parameters `prefix + name`; every store
  // parameter must be present with an identical shape.
  void load_params_into(ParamStore& params,
                        const std::string& prefix = "") const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::map<std::string, CheckpointEntry> entries_;
};

}  // namespace punet
