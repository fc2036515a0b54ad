#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bret/tensor.hpp"

namespace bret {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Named-parameter container persisted as a text manifest (config header,
/// parameter names and shapes, seed) followed by a little-endian float32
/// blob in manifest order. load -> save is byte identical.
struct ModelCheckpoint {
  nlohmann::json config;  // arbitrary config header (model dims, vocab, kind, ...)
  uint64_t seed = 0;
  std::vector<NamedTensor> params;

  const NamedTensor* find(const std::string& name) const;
  long long total_values() const;
};

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::string& path);

/// Snapshots live parameters (cast to float32) into a checkpoint.
template <typename T>
void append_params(ModelCheckpoint& ckpt, const std::vector<Parameter<T>*>& params) {
  for (const Parameter<T>* p : params) {
    NamedTensor t;
    t.name = p->name;
    t.shape = p->shape;
    t.data.reserve(p->value.size());
    for (T v : p->value) t.data.push_back(static_cast<float>(v));
    ckpt.params.push_back(std::move(t));
  }
}

/// Restores live parameters by name; shapes must match exactly.
template <typename T>
void restore_params(const ModelCheckpoint& ckpt, const std::vector<Parameter<T>*>& params) {
  for (Parameter<T>* p : params) {
    const NamedTensor* t = ckpt.find(p->name);
    if (!t) throw std::runtime_error("checkpoint: missing parameter '" + p->name + "'");
    if (t->shape != p->shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "': stored " +
                               shape_str(t->shape) + ", expected " + shape_str(p->shape));
    for (size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<T>(t->data[i]);
    p->zero_grad();
  }
}

}  // namespace bret
