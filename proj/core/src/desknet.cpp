#include <Eigen/Core>
#include <json.hpp>

#include "sevtrain/model.hpp"

namespace sevtrain {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Vector<T, Eigen::Dynamic>;

// 3x3, stride 1, zero-pad 1. cols is (C*9) x (H*W), row-major.
template <typename T>
void im2col3x3(const T* in, int c_in, int h, int w, T* cols) {
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  int row = 0;
  for (int c = 0; c < c_in; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx, ++row) {
        T* dst = cols + static_cast<std::size_t>(row) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          T* drow = dst + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
          if (sy < 0 || sy >= h) {
            std::fill(drow, drow + w, T{0});
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(sy) * static_cast<std::size_t>(w);
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(w, w + 1 - kx);
          for (int x = 0; x < x0; ++x) drow[x] = T{0};
          for (int x = x0; x < x1; ++x) drow[x] = srow[x + kx - 1];
          for (int x = x1; x < w; ++x) drow[x] = T{0};
        }
      }
    }
  }
}

// Transpose of im2col3x3: scatter-adds column gradients back to the image.
template <typename T>
void col2im3x3_add(const T* cols, int c_in, int h, int w, T* din) {
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  int row = 0;
  for (int c = 0; c < c_in; ++c) {
    T* plane = din + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx, ++row) {
        const T* src = cols + static_cast<std::size_t>(row) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          T* prow = plane + static_cast<std::size_t>(sy) * static_cast<std::size_t>(w);
          const T* srow = src + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(w, w + 1 - kx);
          for (int x = x0; x < x1; ++x) prow[x + kx - 1] += srow[x];
        }
      }
    }
  }
}

template <typename T>
void relu_inplace(T* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = std::max(v[i], T{0});
}

template <typename T>
void maxpool2(const T* in, int c, int h, int w, T* out, std::uint8_t* idx) {
  const int ph = h / 2, pw = w / 2;
  for (int ch = 0; ch < c; ++ch) {
    const T* plane = in + static_cast<std::size_t>(ch) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    T* oplane = out + static_cast<std::size_t>(ch) * static_cast<std::size_t>(ph) * static_cast<std::size_t>(pw);
    std::uint8_t* iplane = idx + static_cast<std::size_t>(ch) * static_cast<std::size_t>(ph) * static_cast<std::size_t>(pw);
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) {
        T best = plane[(2 * y) * w + 2 * x];
        std::uint8_t bi = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const T v = plane[(2 * y + dy) * w + 2 * x + dx];
            if (v > best) {
              best = v;
              bi = static_cast<std::uint8_t>(dy * 2 + dx);
            }
          }
        }
        oplane[y * pw + x] = best;
        iplane[y * pw + x] = bi;
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const T* dout, const std::uint8_t* idx, int c, int h, int w, T* din) {
  const int ph = h / 2, pw = w / 2;
  std::fill(din, din + static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), T{0});
  for (int ch = 0; ch < c; ++ch) {
    T* plane = din + static_cast<std::size_t>(ch) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    const T* oplane = dout + static_cast<std::size_t>(ch) * static_cast<std::size_t>(ph) * static_cast<std::size_t>(pw);
    const std::uint8_t* iplane = idx + static_cast<std::size_t>(ch) * static_cast<std::size_t>(ph) * static_cast<std::size_t>(pw);
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) {
        const std::uint8_t bi = iplane[y * pw + x];
        plane[(2 * y + bi / 2) * w + 2 * x + bi % 2] += oplane[y * pw + x];
      }
    }
  }
}

// ReLU mask from the post-activation values (output > 0 iff input > 0).
template <typename T>
void relu_backward_inplace(T* grad, const T* act, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (act[i] <= T{0}) grad[i] = T{0};
  }
}

template <typename T>
void check_finite_sum(const T* v, std::size_t n, const char* layer) {
  // A non-finite element makes the (vectorized) sum non-finite.
  const T s = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(v, static_cast<Eigen::Index>(n)).sum();
  if (!std::isfinite(static_cast<double>(s))) {
    throw std::runtime_error(std::string("model: non-finite activation after ") + layer);
  }
}

// Per-thread forward/backward scratch. Sized on first use and whenever the
// architecture changes between calls.
template <typename T>
struct Workspace {
  int s = -1, f = -1;
  int p1 = 0, p2 = 0, flat = 0;
  std::vector<T> cols1, cols2, cols3, cols4;
  std::vector<T> a1, a2, q1, a3, a4, q2, a5, logits;
  std::vector<std::uint8_t> idx1, idx2;
  std::vector<T> d_buf_a, d_buf_b, d_cols, d_a5, d_logits, d_q2, d_q1;

  void resize(int image_size, int classes) {
    if (s == image_size && f == classes) return;
    s = image_size;
    f = classes;
    p1 = s / 2;
    p2 = p1 / 2;
    flat = 64 * p2 * p2;
    const std::size_t hw = static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
    const std::size_t hw1 = static_cast<std::size_t>(p1) * static_cast<std::size_t>(p1);
    const std::size_t hw2 = static_cast<std::size_t>(p2) * static_cast<std::size_t>(p2);
    cols1.resize(27 * hw);
    cols2.resize(288 * hw);
    cols3.resize(288 * hw1);
    cols4.resize(576 * hw1);
    a1.resize(32 * hw);
    a2.resize(32 * hw);
    q1.resize(32 * hw1);
    idx1.resize(32 * hw1);
    a3.resize(64 * hw1);
    a4.resize(64 * hw1);
    q2.resize(64 * hw2);
    idx2.resize(64 * hw2);
    a5.resize(256);
    logits.resize(static_cast<std::size_t>(f));
    d_buf_a.resize(std::max<std::size_t>(32 * hw, 64 * hw1));
    d_buf_b.resize(std::max<std::size_t>(32 * hw, 64 * hw1));
    d_cols.resize(std::max<std::size_t>(288 * hw, 576 * hw1));
    d_a5.resize(256);
    d_logits.resize(static_cast<std::size_t>(f));
    d_q2.resize(64 * hw2);
    d_q1.resize(32 * hw1);
  }
};

template <typename T>
Workspace<T>& workspace() {
  thread_local Workspace<T> ws;
  return ws;
}

template <typename T>
void conv_forward(const NamedTensor<T>& w, const NamedTensor<T>& b, const T* in, int c_in,
                  int h, int wd, T* cols, T* out, int c_out, const char* layer) {
  const int k = c_in * 9;
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(wd);
  im2col3x3(in, c_in, h, wd, cols);
  Eigen::Map<const RowMat<T>> wm(w.data.data(), c_out, k);
  Eigen::Map<const RowMat<T>> cm(cols, k, static_cast<Eigen::Index>(hw));
  Eigen::Map<RowMat<T>> om(out, c_out, static_cast<Eigen::Index>(hw));
  om.noalias() = wm * cm;
  for (int ch = 0; ch < c_out; ++ch) {
    om.row(ch).array() += b.data[static_cast<std::size_t>(ch)];
  }
  check_finite_sum(out, static_cast<std::size_t>(c_out) * hw, layer);
}

// dz: (c_out x hw). Accumulates dW/db when requested; writes d(input) into
// din (size c_in*hw) when din != nullptr.
template <typename T>
void conv_backward(const NamedTensor<T>& w, const T* cols, const T* dz, int c_in, int h, int wd,
                   int c_out, NamedTensor<T>* dw, NamedTensor<T>* db, T* dcols_buf, T* din) {
  const int k = c_in * 9;
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(wd);
  Eigen::Map<const RowMat<T>> dzm(dz, c_out, static_cast<Eigen::Index>(hw));
  if (dw) {
    Eigen::Map<const RowMat<T>> cm(cols, k, static_cast<Eigen::Index>(hw));
    Eigen::Map<RowMat<T>> dwm(dw->data.data(), c_out, k);
    dwm.noalias() += dzm * cm.transpose();
    for (int ch = 0; ch < c_out; ++ch) {
      db->data[static_cast<std::size_t>(ch)] += dzm.row(ch).sum();
    }
  }
  if (din) {
    Eigen::Map<const RowMat<T>> wm(w.data.data(), c_out, k);
    Eigen::Map<RowMat<T>> dcm(dcols_buf, k, static_cast<Eigen::Index>(hw));
    dcm.noalias() = wm.transpose() * dzm;
    std::fill(din, din + static_cast<std::size_t>(c_in) * hw, T{0});
    col2im3x3_add(dcols_buf, c_in, h, wd, din);
  }
}

}  // namespace

template <typename T>
DeskNet<T>::DeskNet(int num_classes, int image_size, std::uint64_t init_seed)
    : num_classes_(num_classes), image_size_(image_size) {
  if (num_classes < 2) throw std::runtime_error("desknet: num_classes must be >= 2");
  if (image_size < 4) throw std::runtime_error("desknet: image_size must be >= 4");
  const int p2 = (image_size / 2) / 2;
  const int flat = 64 * p2 * p2;

  params_.add("conv1.w", {32, 3, 3, 3});
  params_.add("conv1.b", {32});
  params_.add("conv2.w", {32, 32, 3, 3});
  params_.add("conv2.b", {32});
  params_.add("conv3.w", {64, 32, 3, 3});
  params_.add("conv3.b", {64});
  params_.add("conv4.w", {64, 64, 3, 3});
  params_.add("conv4.b", {64});
  params_.add("fc1.w", {256, flat});
  params_.add("fc1.b", {256});
  params_.add("fc2.w", {num_classes, 256});
  params_.add("fc2.b", {num_classes});

  Rng rng(init_seed);
  for (auto& t : params_.tensors()) {
    if (t.name.ends_with(".b")) continue;  // biases start at zero
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= static_cast<std::size_t>(t.shape[d]);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(stddev * rng.normal());
  }
}

template <typename T>
std::string DeskNet<T>::architecture() const {
  nlohmann::json j = {{"type", "desknet"}, {"num_classes", num_classes_}, {"image_size", image_size_}, {"channels", 3}};
  return j.dump();
}

template <typename T>
std::size_t DeskNet<T>::expected_param_count(int num_classes, int image_size) {
  const int p2 = (image_size / 2) / 2;
  const std::size_t flat = 64ull * static_cast<std::size_t>(p2) * static_cast<std::size_t>(p2);
  std::size_t n = 0;
  n += 32ull * 3 * 3 * 3 + 32;
  n += 32ull * 32 * 3 * 3 + 32;
  n += 64ull * 32 * 3 * 3 + 64;
  n += 64ull * 64 * 3 * 3 + 64;
  n += 256ull * flat + 256;
  n += static_cast<std::size_t>(num_classes) * 256ull + static_cast<std::size_t>(num_classes);
  return n;
}

template <typename T>
void forward_pass(const ParamSet<T>& params, const T* pixels, int s, int f, Workspace<T>& ws) {
  ws.resize(s, f);
  const int p1 = ws.p1, p2 = ws.p2;
  conv_forward(params.at("conv1.w"), params.at("conv1.b"), pixels, 3, s, s, ws.cols1.data(),
               ws.a1.data(), 32, "conv1");
  relu_inplace(ws.a1.data(), ws.a1.size());
  conv_forward(params.at("conv2.w"), params.at("conv2.b"), ws.a1.data(), 32, s, s,
               ws.cols2.data(), ws.a2.data(), 32, "conv2");
  relu_inplace(ws.a2.data(), ws.a2.size());
  maxpool2(ws.a2.data(), 32, s, s, ws.q1.data(), ws.idx1.data());
  conv_forward(params.at("conv3.w"), params.at("conv3.b"), ws.q1.data(), 32, p1, p1,
               ws.cols3.data(), ws.a3.data(), 64, "conv3");
  relu_inplace(ws.a3.data(), ws.a3.size());
  conv_forward(params.at("conv4.w"), params.at("conv4.b"), ws.a3.data(), 64, p1, p1,
               ws.cols4.data(), ws.a4.data(), 64, "conv4");
  relu_inplace(ws.a4.data(), ws.a4.size());
  maxpool2(ws.a4.data(), 64, p1, p1, ws.q2.data(), ws.idx2.data());

  const auto& fc1w = params.at("fc1.w");
  const auto& fc1b = params.at("fc1.b");
  Eigen::Map<const RowMat<T>> w1(fc1w.data.data(), 256, ws.flat);
  Eigen::Map<const Vec<T>> x1(ws.q2.data(), ws.flat);
  Eigen::Map<Vec<T>> h1(ws.a5.data(), 256);
  h1.noalias() = w1 * x1;
  h1 += Eigen::Map<const Vec<T>>(fc1b.data.data(), 256);
  check_finite_sum(ws.a5.data(), ws.a5.size(), "fc1");
  relu_inplace(ws.a5.data(), ws.a5.size());

  const auto& fc2w = params.at("fc2.w");
  const auto& fc2b = params.at("fc2.b");
  Eigen::Map<const RowMat<T>> w2(fc2w.data.data(), f, 256);
  Eigen::Map<const Vec<T>> x2(ws.a5.data(), 256);
  Eigen::Map<Vec<T>> out(ws.logits.data(), f);
  out.noalias() = w2 * x2;
  out += Eigen::Map<const Vec<T>>(fc2b.data.data(), f);
  check_finite_sum(ws.logits.data(), ws.logits.size(), "fc2");
}

template <typename T>
void DeskNet<T>::forward_one(const T* pixels, T* logits) const {
  auto& ws = workspace<T>();
  forward_pass(params_, pixels, image_size_, num_classes_, ws);
  std::copy(ws.logits.begin(), ws.logits.end(), logits);
}

template <typename T>
T DeskNet<T>::loss_grad_one(const T* pixels, const T* target, T* input_grad,
                            ParamSet<T>* param_grad_acc, int* pred) const {
  auto& ws = workspace<T>();
  forward_pass(params_, pixels, image_size_, num_classes_, ws);
  const int s = image_size_, f = num_classes_, p1 = ws.p1;

  const T loss = cross_entropy<T>({ws.logits.data(), static_cast<std::size_t>(f)},
                                  {target, static_cast<std::size_t>(f)});
  if (pred) *pred = argmax_class<T>({ws.logits.data(), static_cast<std::size_t>(f)});
  if (!input_grad && !param_grad_acc) return loss;

  cross_entropy_grad<T>({ws.logits.data(), static_cast<std::size_t>(f)},
                        {target, static_cast<std::size_t>(f)},
                        {ws.d_logits.data(), static_cast<std::size_t>(f)});

  // fc2
  {
    const auto& w2 = params_.at("fc2.w");
    Eigen::Map<const Vec<T>> dz(ws.d_logits.data(), f);
    if (param_grad_acc) {
      Eigen::Map<RowMat<T>> dw(param_grad_acc->at("fc2.w").data.data(), f, 256);
      Eigen::Map<const Vec<T>> h(ws.a5.data(), 256);
      dw.noalias() += dz * h.transpose();
      Eigen::Map<Vec<T>>(param_grad_acc->at("fc2.b").data.data(), f) += dz;
    }
    Eigen::Map<const RowMat<T>> wm(w2.data.data(), f, 256);
    Eigen::Map<Vec<T>> da5(ws.d_a5.data(), 256);
    da5.noalias() = wm.transpose() * dz;
  }
  relu_backward_inplace(ws.d_a5.data(), ws.a5.data(), 256);

  // fc1
  {
    const auto& w1 = params_.at("fc1.w");
    Eigen::Map<const Vec<T>> dz(ws.d_a5.data(), 256);
    if (param_grad_acc) {
      Eigen::Map<RowMat<T>> dw(param_grad_acc->at("fc1.w").data.data(), 256, ws.flat);
      Eigen::Map<const Vec<T>> x(ws.q2.data(), ws.flat);
      dw.noalias() += dz * x.transpose();
      Eigen::Map<Vec<T>>(param_grad_acc->at("fc1.b").data.data(), 256) += dz;
    }
    Eigen::Map<const RowMat<T>> wm(w1.data.data(), 256, ws.flat);
    Eigen::Map<Vec<T>> dq2(ws.d_q2.data(), ws.flat);
    dq2.noalias() = wm.transpose() * dz;
  }

  // pool2 -> conv4 -> conv3 -> pool1 -> conv2 -> conv1
  T* da4 = ws.d_buf_a.data();
  maxpool2_backward(ws.d_q2.data(), ws.idx2.data(), 64, p1, p1, da4);
  relu_backward_inplace(da4, ws.a4.data(), ws.a4.size());

  T* da3 = ws.d_buf_b.data();
  conv_backward(params_.at("conv4.w"), ws.cols4.data(), da4, 64, p1, p1, 64,
                param_grad_acc ? &param_grad_acc->at("conv4.w") : nullptr,
                param_grad_acc ? &param_grad_acc->at("conv4.b") : nullptr, ws.d_cols.data(), da3);
  relu_backward_inplace(da3, ws.a3.data(), ws.a3.size());

  conv_backward(params_.at("conv3.w"), ws.cols3.data(), da3, 32, p1, p1, 64,
                param_grad_acc ? &param_grad_acc->at("conv3.w") : nullptr,
                param_grad_acc ? &param_grad_acc->at("conv3.b") : nullptr, ws.d_cols.data(),
                ws.d_q1.data());

  T* da2 = ws.d_buf_a.data();
  maxpool2_backward(ws.d_q1.data(), ws.idx1.data(), 32, s, s, da2);
  relu_backward_inplace(da2, ws.a2.data(), ws.a2.size());

  T* da1 = ws.d_buf_b.data();
  conv_backward(params_.at("conv2.w"), ws.cols2.data(), da2, 32, s, s, 32,
                param_grad_acc ? &param_grad_acc->at("conv2.w") : nullptr,
                param_grad_acc ? &param_grad_acc->at("conv2.b") : nullptr, ws.d_cols.data(), da1);
  relu_backward_inplace(da1, ws.a1.data(), ws.a1.size());

  conv_backward(params_.at("conv1.w"), ws.cols1.data(), da1, 3, s, s, 32,
                param_grad_acc ? &param_grad_acc->at("conv1.w") : nullptr,
                param_grad_acc ? &param_grad_acc->at("conv1.b") : nullptr, ws.d_cols.data(),
                input_grad);
  return loss;
}

template class DeskNet<float>;
template class DeskNet<double>;

std::unique_ptr<Classifier<float>> build_reference_net(int num_classes, int image_size,
                                                       std::uint64_t init_seed) {
  return std::make_unique<DeskNet<float>>(num_classes, image_size, init_seed);
}

}  // namespace sevtrain
