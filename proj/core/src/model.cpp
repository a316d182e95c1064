#include "sevtrain/model.hpp"

#include <cstring>
#include <numeric>

#include <json.hpp>

namespace sevtrain {

using nlohmann::json;

LabelDistribution validated_label(std::vector<float> weights) {
  double sum = 0.0;
  for (float w : weights) {
    if (!(w >= 0.0f)) throw std::runtime_error("label distribution: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::runtime_error("label distribution: weights sum to " + format_g9(sum) + ", not 1");
  }
  return LabelDistribution{std::move(weights)};
}

template <typename T>
void forward(const Classifier<T>& model, std::span<const T> pixels, int n, std::span<T> logits_out) {
  const auto shape = model.input_shape();
  const std::size_t d = static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
                        static_cast<std::size_t>(shape[2]);
  const std::size_t f = static_cast<std::size_t>(model.num_classes());
  if (pixels.size() != d * static_cast<std::size_t>(n)) {
    throw std::runtime_error("forward: input shape mismatch (expected " +
                             std::to_string(d * static_cast<std::size_t>(n)) + " values, got " +
                             std::to_string(pixels.size()) + ")");
  }
  if (logits_out.size() != f * static_cast<std::size_t>(n)) {
    throw std::runtime_error("forward: logits buffer size mismatch");
  }
  parallel_chunks(static_cast<std::size_t>(n), 16, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      model.forward_one(pixels.data() + i * d, logits_out.data() + i * f);
    }
  });
}

template void forward<float>(const Classifier<float>&, std::span<const float>, int, std::span<float>);
template void forward<double>(const Classifier<double>&, std::span<const double>, int, std::span<double>);

// --- LinearModel ---------------------------------------------------------------

template <typename T>
LinearModel<T>::LinearModel(int num_classes, std::array<int, 3> input_shape,
                            std::uint64_t init_seed, T init_scale)
    : num_classes_(num_classes), shape_(input_shape) {
  input_size_ = static_cast<std::size_t>(shape_[0]) * static_cast<std::size_t>(shape_[1]) *
                static_cast<std::size_t>(shape_[2]);
  auto& w = params_.add("w", {num_classes, static_cast<int>(input_size_)});
  params_.add("b", {num_classes});
  Rng rng(init_seed);
  for (auto& v : w.data) v = static_cast<T>(init_scale * static_cast<T>(rng.normal()));
}

template <typename T>
std::string LinearModel<T>::architecture() const {
  json j = {{"type", "linear"},
            {"num_classes", num_classes_},
            {"channels", shape_[0]},
            {"height", shape_[1]},
            {"width", shape_[2]}};
  return j.dump();
}

template <typename T>
void LinearModel<T>::forward_one(const T* pixels, T* logits) const {
  const auto& w = params_.at("w");
  const auto& b = params_.at("b");
  for (int i = 0; i < num_classes_; ++i) {
    T acc = b.data[static_cast<std::size_t>(i)];
    const T* row = w.data.data() + static_cast<std::size_t>(i) * input_size_;
    for (std::size_t k = 0; k < input_size_; ++k) acc += row[k] * pixels[k];
    logits[i] = acc;
  }
}

template <typename T>
T LinearModel<T>::loss_grad_one(const T* pixels, const T* target, T* input_grad,
                                ParamSet<T>* param_grad_acc, int* pred) const {
  std::vector<T> logits(static_cast<std::size_t>(num_classes_));
  forward_one(pixels, logits.data());
  const T loss = cross_entropy<T>({logits.data(), logits.size()},
                                  {target, static_cast<std::size_t>(num_classes_)});
  if (pred) *pred = argmax_class<T>({logits.data(), logits.size()});
  if (!input_grad && !param_grad_acc) return loss;

  std::vector<T> dlogits(logits.size());
  cross_entropy_grad<T>({logits.data(), logits.size()},
                        {target, static_cast<std::size_t>(num_classes_)},
                        {dlogits.data(), dlogits.size()});
  const auto& w = params_.at("w");
  if (input_grad) {
    std::fill(input_grad, input_grad + input_size_, T{0});
    for (int i = 0; i < num_classes_; ++i) {
      const T* row = w.data.data() + static_cast<std::size_t>(i) * input_size_;
      const T dz = dlogits[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < input_size_; ++k) input_grad[k] += dz * row[k];
    }
  }
  if (param_grad_acc) {
    auto& dw = param_grad_acc->at("w");
    auto& db = param_grad_acc->at("b");
    for (int i = 0; i < num_classes_; ++i) {
      const T dz = dlogits[static_cast<std::size_t>(i)];
      T* row = dw.data.data() + static_cast<std::size_t>(i) * input_size_;
      for (std::size_t k = 0; k < input_size_; ++k) row[k] += dz * pixels[k];
      db.data[static_cast<std::size_t>(i)] += dz;
    }
  }
  return loss;
}

template class LinearModel<float>;
template class LinearModel<double>;

// --- Optimizer -------------------------------------------------------------------

TrainState TrainState::create(std::unique_ptr<Classifier<float>> model, std::uint64_t seed) {
  TrainState st;
  st.momentum = ParamSet<float>::zeros_like(model->params());
  st.model = std::move(model);
  st.epoch = 0;
  st.rng = Rng(seed);
  return st;
}

void sgd_step(TrainState& state, const ParamSet<float>& grads, const OptimizerConfig& opt) {
  if (!grads.all_finite()) throw std::runtime_error("sgd_step: non-finite gradient");
  auto& params = state.model->params().tensors();
  auto& momentum = state.momentum.tensors();
  const auto& g = grads.tensors();
  if (params.size() != g.size() || params.size() != momentum.size()) {
    throw std::runtime_error("sgd_step: parameter/gradient structure mismatch");
  }
  const float mu = static_cast<float>(opt.momentum);
  const float wd = static_cast<float>(opt.weight_decay);
  const float lr = static_cast<float>(opt.learning_rate);
  for (std::size_t t = 0; t < params.size(); ++t) {
    float* th = params[t].data.data();
    float* buf = momentum[t].data.data();
    const float* gr = g[t].data.data();
    const std::size_t n = params[t].size();
    for (std::size_t i = 0; i < n; ++i) {
      buf[i] = mu * buf[i] + gr[i] + wd * th[i];
      th[i] -= lr * buf[i];
    }
  }
}

// --- Batched gradient accumulation -------------------------------------------------

namespace {
constexpr std::size_t kGradChunk = 8;  // fixed, so the reduction order never varies
}

BatchPassStats batch_param_grads(const Classifier<float>& model, std::span<const float> pixels,
                                 std::span<const float> targets, int n,
                                 ParamSet<float>& grads_out, std::span<int> preds_out) {
  const auto shape = model.input_shape();
  const std::size_t d = static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
                        static_cast<std::size_t>(shape[2]);
  const std::size_t f = static_cast<std::size_t>(model.num_classes());
  if (pixels.size() != d * static_cast<std::size_t>(n) || targets.size() != f * static_cast<std::size_t>(n)) {
    throw std::runtime_error("batch_param_grads: shape mismatch");
  }
  if (!preds_out.empty() && preds_out.size() != static_cast<std::size_t>(n)) {
    throw std::runtime_error("batch_param_grads: preds buffer size mismatch");
  }
  const std::size_t n_chunks = (static_cast<std::size_t>(n) + kGradChunk - 1) / kGradChunk;
  std::vector<ParamSet<float>> chunk_grads(n_chunks);
  std::vector<double> chunk_loss(n_chunks, 0.0);
  parallel_chunks(static_cast<std::size_t>(n), kGradChunk, [&](std::size_t lo, std::size_t hi) {
    const std::size_t ci = lo / kGradChunk;
    chunk_grads[ci] = ParamSet<float>::zeros_like(model.params());
    for (std::size_t i = lo; i < hi; ++i) {
      int pred = -1;
      const float loss = model.loss_grad_one(pixels.data() + i * d, targets.data() + i * f,
                                             nullptr, &chunk_grads[ci], &pred);
      chunk_loss[ci] += static_cast<double>(loss);
      if (!preds_out.empty()) preds_out[i] = pred;
    }
  });
  grads_out.zero();
  BatchPassStats total;
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    grads_out.accumulate(chunk_grads[ci]);
    total.loss_sum += chunk_loss[ci];
  }
  grads_out.scale(1.0f / static_cast<float>(n));
  return total;
}

// --- Checkpoints --------------------------------------------------------------------

namespace {

std::unique_ptr<Classifier<float>> build_from_arch(const json& arch) {
  const std::string type = arch.at("type").get<std::string>();
  if (type == "desknet") {
    return std::make_unique<DeskNet<float>>(arch.at("num_classes").get<int>(),
                                            arch.at("image_size").get<int>(), 0);
  }
  if (type == "linear") {
    return std::make_unique<LinearModel<float>>(
        arch.at("num_classes").get<int>(),
        std::array<int, 3>{arch.at("channels").get<int>(), arch.at("height").get<int>(),
                           arch.at("width").get<int>()},
        0);
  }
  throw std::runtime_error("checkpoint: unknown architecture type '" + type + "'");
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& manifest_path,
                     const OptimizerConfig& opt) {
  json table = json::array();
  std::vector<float> blob;
  blob.reserve(state.model->params().total_size() + state.momentum.total_size());
  auto append = [&](const char* prefix, const ParamSet<float>& set) {
    for (const auto& t : set.tensors()) {
      table.push_back({{"name", std::string(prefix) + "/" + t.name},
                       {"offset", blob.size()},
                       {"shape", t.shape}});
      blob.insert(blob.end(), t.data.begin(), t.data.end());
    }
  };
  append("param", state.model->params());
  append("momentum", state.momentum);

  const std::string blob_name = manifest_path.stem().string() + ".f32";
  json manifest = {
      {"format", "sevtrain-checkpoint-v1"},
      {"architecture", json::parse(state.model->architecture())},
      {"epoch", state.epoch},
      {"rng_state", state.rng.save_state()},
      {"optimizer",
       {{"learning_rate", opt.learning_rate},
        {"momentum", opt.momentum},
        {"weight_decay", opt.weight_decay}}},
      {"tensor_file", blob_name},
      {"tensors", table},
      {"param_checksum", state.model->params().checksum()},
  };
  write_text_file(manifest_path, manifest.dump(2) + "\n");
  write_f32_file(manifest_path.parent_path() / blob_name, blob);
}

TrainState load_checkpoint(const std::filesystem::path& manifest_path, OptimizerConfig* opt_out) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", std::string()) != "sevtrain-checkpoint-v1") {
    throw std::runtime_error("checkpoint: unrecognized format in " + manifest_path.string());
  }
  auto model = build_from_arch(manifest.at("architecture"));
  TrainState state = TrainState::create(std::move(model), 0);
  state.epoch = manifest.at("epoch").get<int>();
  state.rng.restore_state(manifest.at("rng_state").get<std::string>());
  if (opt_out) {
    const auto& o = manifest.at("optimizer");
    opt_out->learning_rate = o.at("learning_rate").get<double>();
    opt_out->momentum = o.at("momentum").get<double>();
    opt_out->weight_decay = o.at("weight_decay").get<double>();
  }

  const auto blob = read_f32_file(manifest_path.parent_path() /
                                  manifest.at("tensor_file").get<std::string>());
  auto load_set = [&](const char* prefix, ParamSet<float>& set) {
    for (auto& t : set.tensors()) {
      const std::string want = std::string(prefix) + "/" + t.name;
      bool found = false;
      for (const auto& entry : manifest.at("tensors")) {
        if (entry.at("name").get<std::string>() != want) continue;
        const auto offset = entry.at("offset").get<std::size_t>();
        if (offset + t.size() > blob.size()) {
          throw std::runtime_error("checkpoint: tensor '" + want + "' exceeds blob size");
        }
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                  blob.begin() + static_cast<std::ptrdiff_t>(offset + t.size()), t.data.begin());
        found = true;
        break;
      }
      if (!found) throw std::runtime_error("checkpoint: missing tensor '" + want + "'");
    }
  };
  load_set("param", state.model->params());
  load_set("momentum", state.momentum);

  const auto expect = manifest.at("param_checksum").get<std::uint64_t>();
  if (state.model->params().checksum() != expect) {
    throw std::runtime_error("checkpoint: parameter checksum mismatch in " + manifest_path.string());
  }
  return state;
}

}  // namespace sevtrain
