// SPDX-License-Identifier: Apache-2.0
#include "punet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace punet {

namespace {

constexpr char kMagic[8] = {'P', 'U', 'N', 'C', 'H', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("checkpoint: " + msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(bool(is), "truncated file");
  return v;
}

}  // namespace

void Checkpoint::put_f64(const std::string& name, Shape shape,
                         std::vector<double> values) {
  require(!name.empty(), "empty entry name");
  require(shape_numel(shape) == static_cast<i64>(values.size()),
          name + ": shape " + shape_str(shape) + " does not hold " +
              std::to_string(values.size()) + " values");
  CheckpointEntry e;
  e.shape = std::move(shape);
  e.dtype = 'f';
  e.f64 = std::move(values);
  entries_[name] = std::move(e);
}

void Checkpoint::put_i64(const std::string& name, Shape shape,
                         std::vector<i64> values) {
  require(!name.empty(), "empty entry name");
  require(shape_numel(shape) == static_cast<i64>(values.size()),
          name + ": shape " + shape_str(shape) + " does not hold " +
              std::to_string(values.size()) + " values");
  CheckpointEntry e;
  e.shape = std::move(shape);
  e.dtype = 'i';
  e.i64s = std::move(values);
  entries_[name] = std::move(e);
}

void Checkpoint::put_scalar(const std::string& name, double value) {
  put_f64(name, {1}, {value});
}

void Checkpoint::put_int(const std::string& name, i64 value) {
  put_i64(name, {1}, {value});
}

void Checkpoint::put_tensor(const std::string& name, const Tensor& t) {
  require(t.defined(), name + ": undefined tensor");
  put_f64(name, t.shape(),
          std::vector<double>(t.data(), t.data() + t.numel()));
}

bool Checkpoint::has(const std::string& name) const {
  return entries_.count(name) > 0;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), "missing entry " + name);
  return it->second;
}

const std::vector<double>& Checkpoint::f64(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  require(e.dtype == 'f', name + " is not f64");
  return e.f64;
}

const std::vector<i64>& Checkpoint::i64s(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  require(e.dtype == 'i', name + " is not i64");
  return e.i64s;
}

double Checkpoint::scalar(const std::string& name) const {
  const auto& v = f64(name);
  require(v.size() == 1, name + " is not a scalar");
  return v[0];
}

i64 Checkpoint::integer(const std::string& name) const {
  const auto& v = i64s(name);
  require(v.size() == 1, name + " is not a scalar");
  return v[0];
}

Tensor Checkpoint::tensor(const std::string& name, bool requires_grad) const {
  const CheckpointEntry& e = entry(name);
  require(e.dtype == 'f', name + " is not f64");
  return Tensor::from_data(e.shape, e.f64, requires_grad);
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

void Checkpoint::put_params(const ParamStore& params,
                            const std::string& prefix) {
  for (const auto& [name, t] : params.entries())
    put_tensor(prefix + name, t);
}

void Checkpoint::load_params_into(ParamStore& params,
                                  const std::string& prefix) const {
  for (auto& [name, t] : params.entries()) {
    const std::string key = prefix + name;
    require(has(key), "missing parameter " + key);
    const CheckpointEntry& e = entry(key);
    require(e.dtype == 'f', key + " is not f64");
    require(e.shape == t.shape(), key + ": stored shape " +
                                      shape_str(e.shape) + " vs expected " +
                                      shape_str(t.shape()));
    params.set_data(name, e.f64);
  }
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(bool(os), "cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(entries_.size()));

  // Table first, then payloads; offsets are relative to the payload base.
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint8_t>(e.dtype));
    write_pod(os, static_cast<std::uint32_t>(e.shape.size()));
    for (i64 d : e.shape) write_pod(os, static_cast<std::uint64_t>(d));
    write_pod(os, offset);
    offset += static_cast<std::uint64_t>(e.numel()) * 8;
  }
  for (const auto& [name, e] : entries_) {
    if (e.dtype == 'f')
      os.write(reinterpret_cast<const char*>(e.f64.data()),
               static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
    else
      os.write(reinterpret_cast<const char*>(e.i64s.data()),
               static_cast<std::streamsize>(e.i64s.size() * sizeof(i64)));
  }
  require(bool(os), "write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), "cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  require(bool(is) && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
          path + ": bad magic");
  const auto version = read_pod<std::uint32_t>(is);
  require(version == kVersion,
          path + ": unsupported version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(is);

  struct Row {
    std::string name;
    char dtype;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Row> rows;
  rows.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Row r;
    const auto name_len = read_pod<std::uint32_t>(is);
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    require(bool(is), path + ": truncated name");
    r.dtype = static_cast<char>(read_pod<std::uint8_t>(is));
    require(r.dtype == 'f' || r.dtype == 'i',
            path + ": bad dtype for " + r.name);
    const auto rank = read_pod<std::uint32_t>(is);
    for (std::uint32_t d = 0; d < rank; ++d)
      r.shape.push_back(static_cast<i64>(read_pod<std::uint64_t>(is)));
    r.offset = read_pod<std::uint64_t>(is);
    rows.push_back(std::move(r));
  }

  const std::streampos base = is.tellg();
  Checkpoint ck;
  for (const Row& r : rows) {
    const i64 n = shape_numel(r.shape);
    is.seekg(base + static_cast<std::streamoff>(r.offset));
    if (r.dtype == 'f') {
      std::vector<double> v(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      require(bool(is), path + ": truncated payload for " + r.name);
      ck.put_f64(r.name, r.shape, std::move(v));
    } else {
      std::vector<i64> v(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(i64)));
      require(bool(is), path + ": truncated payload for " + r.name);
      ck.put_i64(r.name, r.shape, std::move(v));
    }
  }
  return ck;
}

}  // namespace punet
