#include "hgcd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>

#include <json.hpp>

namespace hgcd {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (weights.warmup_epochs > epochs) {
    throw ConfigError("warmup_epochs (" + std::to_string(weights.warmup_epochs) +
                      ") exceeds epochs (" + std::to_string(epochs) + ")");
  }
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  weights.validate();
  model.validate();
  augment.validate();
}

TrainState::TrainState(ModelConfig cfg, uint64_t seed_)
    : model(std::move(cfg), seed_), seed(seed_) {
  momentum_buffers.resize(model.params().size());
  for (size_t i = 0; i < momentum_buffers.size(); ++i) {
    momentum_buffers[i].assign(static_cast<size_t>(model.params()[i].tensor.numel()), 0.0);
  }
}

void sgd_step(std::vector<Param>& params, std::vector<std::vector<double>>& momentum_buffers,
              double lr, double momentum) {
  if (params.size() != momentum_buffers.size()) {
    throw ConfigError("sgd_step: momentum buffers do not match parameters");
  }
  for (size_t p = 0; p < params.size(); ++p) {
    auto g = params[p].tensor.grad();
    auto w = params[p].tensor.values_mut();
    auto& v = momentum_buffers[p];
    if (v.size() != w.size()) {
      throw ConfigError("sgd_step: buffer shape mismatch for " + params[p].name);
    }
    if (g.empty()) {
      // Disconnected parameter: gradient is zero; momentum still decays.
      for (size_t i = 0; i < w.size(); ++i) {
        v[i] *= momentum;
        w[i] -= lr * v[i];
      }
      continue;
    }
    for (double gi : g) {
      if (!std::isfinite(gi)) {
        throw NumericError("sgd_step: non-finite gradient for parameter " + params[p].name);
      }
    }
    for (size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
  }
}

namespace {

Tensor stack_views(const BatchView& batch) {
  int64_t b = batch.view1.rows(), d = batch.view1.cols();
  std::vector<double> data;
  data.reserve(static_cast<size_t>(2 * b * d));
  data.insert(data.end(), batch.view1.values().begin(), batch.view1.values().end());
  data.insert(data.end(), batch.view2.values().begin(), batch.view2.values().end());
  return Tensor::from({2 * b, d}, std::move(data));
}

void clip_gradients(std::vector<Param>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  double factor = max_norm / norm;
  for (auto& p : params) {
    auto& g = dat(p.tensor).grad;
    for (double& gi : g) gi *= factor;
  }
}

void assert_tree_head_untouched(const Model& model) {
  for (const std::string& name : model.tree_head_param_names()) {
    for (const auto& p : model.params()) {
      if (p.name != name) continue;
      for (double g : p.tensor.grad()) {
        if (g != 0.0) {
          throw NumericError("warm-up invariant violated: tree head parameter " + name +
                             " received gradient");
        }
      }
    }
  }
}

TrainResult run_training(TrainState state, const EmbeddingDataset& ds, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (ds.dim != cfg.model.encoder.input_dim) {
    throw ConfigError("dataset dimension " + std::to_string(ds.dim) +
                      " does not match encoder input " +
                      std::to_string(cfg.model.encoder.input_dim));
  }

  TrainResult result{std::move(state)};
  auto& st = result.state;

  for (int epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches(ds, cfg.batch_size, cfg.seed, epoch, cfg.augment);
    bool warmup = epoch < cfg.weights.warmup_epochs;
    double lr = cfg.learning_rate;
    if (cfg.cosine_lr && cfg.epochs > 0) {
      lr *= 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                  static_cast<double>(cfg.epochs)));
    }

    LossBreakdown sums;
    int step = 0;
    for (const BatchView& batch : batches) {
      Graph graph;
      LossBreakdown bd;
      try {
        GraphScope scope(graph);
        Tensor x = stack_views(batch);
        Tensor h = st.model.encode(x);
        Tensor z = st.model.project_contrastive(h);
        Tensor q = st.model.project_tree(h);
        TotalLossResult res =
            total_loss(z, q, batch.labels, epoch, cfg.weights, cfg.options, cfg.model.tree);
        bd = res.breakdown;
        if (!std::isfinite(bd.l_total)) {
          throw NumericError("loss is non-finite");
        }
        graph.backward(res.objective);
        if (warmup) assert_tree_head_untouched(st.model);
        if (cfg.clip_norm > 0.0) clip_gradients(st.model.params(), cfg.clip_norm);
        sgd_step(st.model.params(), st.momentum_buffers, lr, cfg.momentum);
      } catch (const NumericError& e) {
        // Parameters are untouched by the failed step: they are the
        // last-good state. The caller decides where to save it.
        for (auto& p : st.model.params()) p.tensor.zero_grad();
        result.diverged = true;
        result.diverged_epoch = epoch;
        result.diverged_step = step;
        result.reason = e.what();
        return result;
      }
      for (auto& p : st.model.params()) p.tensor.zero_grad();
      sums.l_unsup += bd.l_unsup;
      sums.l_sup += bd.l_sup;
      sums.l_contrastive += bd.l_contrastive;
      sums.l_hier += bd.l_hier;
      sums.l_reg += bd.l_reg;
      sums.l_total += bd.l_total;
      ++step;
    }

    EpochStats stats;
    stats.epoch = epoch;
    if (step > 0) {
      double inv = 1.0 / static_cast<double>(step);
      stats.loss = {sums.l_unsup * inv, sums.l_sup * inv,  sums.l_contrastive * inv,
                    sums.l_hier * inv,  sums.l_reg * inv,  sums.l_total * inv};
    }
    st.history.push_back(stats);
    st.epoch = epoch + 1;
    if (on_epoch) {
      double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      on_epoch(st, stats, wall_ms);
    }
  }
  return result;
}

}  // namespace

TrainResult train(const EmbeddingDataset& ds, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  return run_training(TrainState(cfg.model, cfg.seed), ds, cfg, on_epoch);
}

TrainResult continue_training(TrainState state, const EmbeddingDataset& ds,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return run_training(std::move(state), ds, cfg, on_epoch);
}

// ---- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'H', 'G', 'C', 'D'};
constexpr uint32_t kCheckpointVersion = 1;

nlohmann::json model_config_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["encoder"] = {{"input_dim", cfg.encoder.input_dim},
                  {"hidden", cfg.encoder.hidden},
                  {"output_dim", cfg.encoder.output_dim},
                  {"activation", activation_name(cfg.encoder.activation)}};
  j["contrastive"] = {{"num_layers", cfg.contrastive.num_layers},
                      {"hidden_dim", cfg.contrastive.hidden_dim},
                      {"output_dim", cfg.contrastive.output_dim}};
  j["tree_head"] = {{"hidden_dim", cfg.tree_head.hidden_dim}};
  j["tree_depth"] = cfg.tree.depth;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.encoder.input_dim = j.at("encoder").at("input_dim").get<int64_t>();
  cfg.encoder.hidden = j.at("encoder").at("hidden").get<std::vector<int64_t>>();
  cfg.encoder.output_dim = j.at("encoder").at("output_dim").get<int64_t>();
  cfg.encoder.activation = activation_from_name(j.at("encoder").at("activation").get<std::string>());
  cfg.contrastive.num_layers = j.at("contrastive").at("num_layers").get<int>();
  cfg.contrastive.hidden_dim = j.at("contrastive").at("hidden_dim").get<int64_t>();
  cfg.contrastive.output_dim = j.at("contrastive").at("output_dim").get<int64_t>();
  cfg.tree_head.hidden_dim = j.at("tree_head").at("hidden_dim").get<int64_t>();
  cfg.tree.depth = j.at("tree_depth").get<int>();
  return cfg;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::string& path, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError(path + ": truncated checkpoint while reading " + std::string(what));
  }
  return v;
}

void write_named_tensor(std::ostream& out, const std::string& name, const Shape& shape,
                        std::span<const double> values) {
  write_pod(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod(out, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) write_pod(out, static_cast<uint64_t>(d));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

NamedTensor read_named_tensor(std::istream& in, const std::string& path) {
  NamedTensor t;
  uint32_t name_len = read_pod<uint32_t>(in, path, "tensor name length");
  t.name.resize(name_len);
  if (!in.read(t.name.data(), name_len)) {
    throw DataError(path + ": truncated checkpoint in tensor name");
  }
  uint32_t rank = read_pod<uint32_t>(in, path, "tensor rank");
  int64_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    auto d = static_cast<int64_t>(read_pod<uint64_t>(in, path, "tensor dimension"));
    t.shape.push_back(d);
    numel *= d;
  }
  t.values.resize(static_cast<size_t>(numel));
  if (!in.read(reinterpret_cast<char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(double)))) {
    throw DataError(path + ": truncated checkpoint in tensor '" + t.name + "'");
  }
  return t;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");

  nlohmann::json meta;
  meta["kind"] = "train_state";
  meta["epoch"] = state.epoch;
  meta["seed"] = state.seed;
  meta["model_config"] = model_config_json(state.model.config());
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : state.history) {
    hist.push_back({{"epoch", e.epoch},
                    {"l_unsup", e.loss.l_unsup},
                    {"l_sup", e.loss.l_sup},
                    {"l_contrastive", e.loss.l_contrastive},
                    {"l_hier", e.loss.l_hier},
                    {"l_reg", e.loss.l_reg},
                    {"l_total", e.loss.l_total}});
  }
  meta["history"] = std::move(hist);
  std::string meta_str = meta.dump();

  out.write(kCheckpointMagic, 4);
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<uint64_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  const auto& params = state.model.params();
  write_pod(out, static_cast<uint32_t>(params.size() * 2));
  for (const auto& p : params) {
    write_named_tensor(out, p.name, p.tensor.shape(), p.tensor.values());
  }
  for (size_t i = 0; i < params.size(); ++i) {
    write_named_tensor(out, "mom." + params[i].name, params[i].tensor.shape(),
                       state.momentum_buffers[i]);
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError(path + ": bad magic bytes (not a checkpoint)");
  }
  uint32_t version = read_pod<uint32_t>(in, path, "version");
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version) +
                    " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  uint64_t meta_len = read_pod<uint64_t>(in, path, "metadata length");
  std::string meta_str(meta_len, '\0');
  if (!in.read(meta_str.data(), static_cast<std::streamsize>(meta_len))) {
    throw DataError(path + ": truncated checkpoint metadata");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint metadata: " + e.what());
  }

  std::optional<TrainState> loaded;
  try {
    ModelConfig cfg = model_config_from_json(meta.at("model_config"));
    loaded.emplace(cfg, meta.at("seed").get<uint64_t>());
    TrainState& state = *loaded;
    state.epoch = meta.at("epoch").get<int>();
    for (const auto& e : meta.at("history")) {
      EpochStats s;
      s.epoch = e.at("epoch").get<int>();
      s.loss.l_unsup = e.at("l_unsup").get<double>();
      s.loss.l_sup = e.at("l_sup").get<double>();
      s.loss.l_contrastive = e.at("l_contrastive").get<double>();
      s.loss.l_hier = e.at("l_hier").get<double>();
      s.loss.l_reg = e.at("l_reg").get<double>();
      s.loss.l_total = e.at("l_total").get<double>();
      state.history.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": checkpoint metadata missing field: " + e.what());
  }
  TrainState& state = *loaded;

  uint32_t tensor_count = read_pod<uint32_t>(in, path, "tensor count");
  for (uint32_t i = 0; i < tensor_count; ++i) {
    NamedTensor t = read_named_tensor(in, path);
    if (t.name.rfind("mom.", 0) == 0) {
      std::string pname = t.name.substr(4);
      bool found = false;
      auto& params = state.model.params();
      for (size_t p = 0; p < params.size(); ++p) {
        if (params[p].name == pname) {
          if (state.momentum_buffers[p].size() != t.values.size()) {
            throw DataError(path + ": momentum buffer size mismatch for " + pname);
          }
          state.momentum_buffers[p] = std::move(t.values);
          found = true;
          break;
        }
      }
      if (!found) throw DataError(path + ": momentum buffer for unknown parameter " + pname);
    } else {
      state.model.load_param_values(t.name, t.shape, t.values);
    }
  }
  char extra;
  if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after tensor section");
  return std::move(state);
}

}  // namespace hgcd
