#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hgcd/tensor.hpp"
#include "hgcd/tree.hpp"

namespace hgcd {

enum class Activation { kRelu, kGelu };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Encoder f: MLP over precomputed feature embeddings. Three layers by
// default (input -> 256 -> 256 -> 128).
struct EncoderConfig {
  int64_t input_dim = 32;
  std::vector<int64_t> hidden = {256, 256};
  int64_t output_dim = 128;
  Activation activation = Activation::kRelu;
};

// Contrastive head phi: four GeLU layers ending in the embedding used by the
// contrastive losses; rows are l2-normalized after the forward pass.
struct ContrastiveHeadConfig {
  int num_layers = 4;
  int64_t hidden_dim = 128;
  int64_t output_dim = 64;
};

// Tree head pi: two layers, ReLU after the first, clamped sigmoid after the
// second; output width is the number of internal tree nodes K.
struct TreeHeadConfig {
  int64_t hidden_dim = 128;
};

struct ModelConfig {
  EncoderConfig encoder;
  ContrastiveHeadConfig contrastive;
  TreeHeadConfig tree_head;
  TreeConfig tree;

  void validate() const;
};

struct Param {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  // Weights drawn uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(...)), biases
  // zero; deterministic under seed.
  Model(ModelConfig cfg, uint64_t seed);

  // MLP forward over a [B x input_dim] batch. Rejects non-finite inputs
  // naming the offending sample row.
  Tensor encode(const Tensor& x) const;

  // phi(h) with unit-norm rows.
  Tensor project_contrastive(const Tensor& h) const;

  // pi(h): branch probabilities in [kBranchClampLo, kBranchClampHi], shape
  // [B x K].
  Tensor project_tree(const Tensor& h) const;

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  int64_t param_count() const;

  // Parameter names of the tree head's own layers (zero-gradient during
  // warm-up).
  std::vector<std::string> tree_head_param_names() const;

  // Replaces parameter values by name; shapes must match (checkpoint load).
  void load_param_values(const std::string& name, const Shape& shape,
                         const std::vector<double>& values);

 private:
  struct Layer {
    int w_index;  // into params_
    int b_index;
  };
  ModelConfig cfg_;
  std::vector<Param> params_;
  std::vector<Layer> enc_, phi_, pi_;

  Tensor run_linear(const Layer& l, const Tensor& x) const;
};

}  // namespace hgcd
