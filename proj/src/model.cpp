#include "hgcd/model.hpp"

#include <algorithm>
#include <cmath>

#include "hgcd/rng.hpp"

namespace hgcd {

std::string activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "gelu";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation '" + name + "' (expected relu or gelu)");
}

void ModelConfig::validate() const {
  if (encoder.input_dim < 1 || encoder.output_dim < 1) {
    throw ConfigError("encoder dimensions must be >= 1");
  }
  for (int64_t h : encoder.hidden) {
    if (h < 1) throw ConfigError("encoder hidden widths must be >= 1");
  }
  if (contrastive.num_layers < 1) throw ConfigError("contrastive head needs >= 1 layer");
  if (contrastive.hidden_dim < 1 || contrastive.output_dim < 1) {
    throw ConfigError("contrastive head dimensions must be >= 1");
  }
  if (tree_head.hidden_dim < 1) throw ConfigError("tree head hidden width must be >= 1");
  tree.validate();
}

namespace {

std::vector<double> xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(static_cast<size_t>(fan_in * fan_out));
  for (double& v : w) v = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, kStreamParamInit));

  auto add_layer = [&](const std::string& prefix, int index, int64_t in, int64_t out,
                       std::vector<Layer>& net) {
    std::string base = prefix + "." + std::to_string(index);
    Layer l;
    l.w_index = static_cast<int>(params_.size());
    params_.push_back({base + ".w", Tensor::from({in, out}, xavier_uniform(in, out, rng), true)});
    l.b_index = static_cast<int>(params_.size());
    params_.push_back({base + ".b", Tensor::zeros({out}, true)});
    net.push_back(l);
  };

  // Encoder f.
  int64_t prev = cfg_.encoder.input_dim;
  int li = 0;
  for (int64_t h : cfg_.encoder.hidden) add_layer("enc", li++, prev, h, enc_), prev = h;
  add_layer("enc", li, prev, cfg_.encoder.output_dim, enc_);

  // Contrastive head phi.
  prev = cfg_.encoder.output_dim;
  for (int i = 0; i < cfg_.contrastive.num_layers - 1; ++i) {
    add_layer("phi", i, prev, cfg_.contrastive.hidden_dim, phi_);
    prev = cfg_.contrastive.hidden_dim;
  }
  add_layer("phi", cfg_.contrastive.num_layers - 1, prev, cfg_.contrastive.output_dim, phi_);

  // Tree head pi.
  add_layer("pi", 0, cfg_.encoder.output_dim, cfg_.tree_head.hidden_dim, pi_);
  add_layer("pi", 1, cfg_.tree_head.hidden_dim, cfg_.tree.num_internal(), pi_);
}

Tensor Model::run_linear(const Layer& l, const Tensor& x) const {
  return add(matmul(x, params_[static_cast<size_t>(l.w_index)].tensor),
             params_[static_cast<size_t>(l.b_index)].tensor);
}

Tensor Model::encode(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != cfg_.encoder.input_dim) {
    throw ShapeError("encode: expected [B x " + std::to_string(cfg_.encoder.input_dim) +
                     "], got " + shape_str(x.shape()));
  }
  for (int64_t i = 0; i < x.rows(); ++i) {
    for (int64_t j = 0; j < x.cols(); ++j) {
      if (!std::isfinite(x.at(i, j))) {
        throw DataError("encode: non-finite input at sample row " + std::to_string(i));
      }
    }
  }
  Tensor h = x;
  for (size_t i = 0; i < enc_.size(); ++i) {
    h = run_linear(enc_[i], h);
    if (i + 1 < enc_.size()) {
      h = cfg_.encoder.activation == Activation::kRelu ? relu(h) : gelu(h);
    }
  }
  return h;
}

Tensor Model::project_contrastive(const Tensor& h) const {
  Tensor z = h;
  for (size_t i = 0; i < phi_.size(); ++i) {
    z = run_linear(phi_[i], z);
    if (i + 1 < phi_.size()) z = gelu(z);
  }
  return l2_normalize_rows(z);
}

Tensor Model::project_tree(const Tensor& h) const {
  Tensor q = relu(run_linear(pi_[0], h));
  q = sigmoid(run_linear(pi_[1], q));
  return clamp(q, kBranchClampLo, kBranchClampHi);
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<std::string> Model::tree_head_param_names() const {
  std::vector<std::string> names;
  for (const Layer& l : pi_) {
    names.push_back(params_[static_cast<size_t>(l.w_index)].name);
    names.push_back(params_[static_cast<size_t>(l.b_index)].name);
  }
  return names;
}

void Model::load_param_values(const std::string& name, const Shape& shape,
                              const std::vector<double>& values) {
  for (auto& p : params_) {
    if (p.name != name) continue;
    if (p.tensor.shape() != shape) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                      ", model expects " + shape_str(p.tensor.shape()));
    }
    std::copy(values.begin(), values.end(), p.tensor.values_mut().begin());
    return;
  }
  throw DataError("checkpoint contains unknown parameter '" + name + "'");
}

}  // namespace hgcd
