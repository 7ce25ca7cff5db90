#include "evcma/nn.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "evcma/error.hpp"

namespace evcma::nn {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kDimension, what);
}

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.n) + ", " + std::to_string(t.w) + ", " + std::to_string(t.c) + "]";
}

void he_uniform(Param& p, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  for (auto& v : p.value) v = (2.0 * uniform01(rng) - 1.0) * limit;
}

}  // namespace

Tensor::Tensor(int n_, int w_, int c_, double fill) : n(n_), w(w_), c(c_) {
  require(n_ >= 0 && w_ >= 0 && c_ >= 0, "negative tensor extent");
  data.assign(static_cast<std::size_t>(n_) * static_cast<std::size_t>(w_) *
                  static_cast<std::size_t>(c_),
              fill);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

nlohmann::json Layer::config() const { return {{"kind", kind()}}; }

// ---- Conv1d ---------------------------------------------------------------

Conv1d::Conv1d(int in_channels, int out_channels, int kernel)
    : in_(in_channels), out_(out_channels), k_(kernel) {
  require(in_ > 0 && out_ > 0 && k_ > 0 && k_ % 2 == 1, "conv1d needs positive sizes, odd kernel");
  weight_.name = "weight";
  weight_.value.assign(static_cast<std::size_t>(out_ * k_ * in_), 0.0);
  weight_.grad.assign(weight_.value.size(), 0.0);
  bias_.name = "bias";
  bias_.value.assign(static_cast<std::size_t>(out_), 0.0);
  bias_.grad.assign(bias_.value.size(), 0.0);
}

void Conv1d::init(Rng& rng) {
  he_uniform(weight_, k_ * in_, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

std::pair<int, int> Conv1d::output_shape(int w, int c) const {
  require(c == in_, "conv1d expects " + std::to_string(in_) + " channels, got " + std::to_string(c));
  return {w, out_};
}

nlohmann::json Conv1d::config() const {
  return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"kernel", k_}};
}

Tensor Conv1d::forward(const Tensor& x) const {
  require(x.c == in_, "conv1d input " + shape_str(x) + " has wrong channel count");
  Tensor y(x.n, x.w, out_);
  const int half = k_ / 2;
  const double* W = weight_.value.data();
  for (int i = 0; i < x.n; ++i) {
    for (int p = 0; p < x.w; ++p) {
      double* yp = &y.data[y.index(i, p, 0)];
      for (int o = 0; o < out_; ++o) yp[o] = bias_.value[static_cast<std::size_t>(o)];
      for (int k = 0; k < k_; ++k) {
        const int q = p + k - half;
        if (q < 0 || q >= x.w) continue;
        const double* xq = &x.data[x.index(i, q, 0)];
        for (int o = 0; o < out_; ++o) {
          const double* wk = W + (static_cast<std::size_t>(o) * k_ + k) * in_;
          double acc = 0.0;
          for (int ci = 0; ci < in_; ++ci) acc += wk[ci] * xq[ci];
          yp[o] += acc;
        }
      }
    }
  }
  return y;
}

Tensor Conv1d::forward_train(const Tensor& x, Rng&) {
  cache_ = x;
  return forward(x);
}

Tensor Conv1d::backward(const Tensor& g) {
  const Tensor& x = cache_;
  require(g.n == x.n && g.w == x.w && g.c == out_, "conv1d gradient " + shape_str(g) + " mismatch");
  Tensor dx(x.n, x.w, in_);
  const int half = k_ / 2;
  const double* W = weight_.value.data();
  double* dW = weight_.grad.data();
  for (int i = 0; i < x.n; ++i) {
    for (int p = 0; p < x.w; ++p) {
      const double* gp = &g.data[g.index(i, p, 0)];
      for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += gp[o];
      for (int k = 0; k < k_; ++k) {
        const int q = p + k - half;
        if (q < 0 || q >= x.w) continue;
        const double* xq = &x.data[x.index(i, q, 0)];
        double* dxq = &dx.data[dx.index(i, q, 0)];
        for (int o = 0; o < out_; ++o) {
          const double go = gp[o];
          if (go == 0.0) continue;
          const std::size_t off = (static_cast<std::size_t>(o) * k_ + k) * in_;
          const double* wk = W + off;
          double* dwk = dW + off;
          for (int ci = 0; ci < in_; ++ci) {
            dwk[ci] += go * xq[ci];
            dxq[ci] += go * wk[ci];
          }
        }
      }
    }
  }
  return dx;
}

// ---- Dense ----------------------------------------------------------------

Dense::Dense(int in_features, int out_features) : in_(in_features), out_(out_features) {
  require(in_ > 0 && out_ > 0, "dense needs positive sizes");
  weight_.name = "weight";
  weight_.value.assign(static_cast<std::size_t>(in_) * out_, 0.0);
  weight_.grad.assign(weight_.value.size(), 0.0);
  bias_.name = "bias";
  bias_.value.assign(static_cast<std::size_t>(out_), 0.0);
  bias_.grad.assign(bias_.value.size(), 0.0);
}

void Dense::init(Rng& rng) {
  he_uniform(weight_, in_, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

std::pair<int, int> Dense::output_shape(int w, int c) const {
  require(c == in_, "dense expects " + std::to_string(in_) + " features, got " + std::to_string(c));
  return {w, out_};
}

nlohmann::json Dense::config() const { return {{"kind", kind()}, {"in", in_}, {"out", out_}}; }

Tensor Dense::forward(const Tensor& x) const {
  require(x.c == in_, "dense input " + shape_str(x) + " has wrong feature count");
  Tensor y(x.n, x.w, out_);
  const std::size_t rows = static_cast<std::size_t>(x.n) * x.w;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.data[r * in_];
    double* yr = &y.data[r * out_];
    for (int o = 0; o < out_; ++o) {
      const double* wo = &weight_.value[static_cast<std::size_t>(o) * in_];
      double acc = bias_.value[static_cast<std::size_t>(o)];
      for (int j = 0; j < in_; ++j) acc += wo[j] * xr[j];
      yr[o] = acc;
    }
  }
  return y;
}

Tensor Dense::forward_train(const Tensor& x, Rng&) {
  cache_ = x;
  return forward(x);
}

Tensor Dense::backward(const Tensor& g) {
  const Tensor& x = cache_;
  require(g.n == x.n && g.w == x.w && g.c == out_, "dense gradient " + shape_str(g) + " mismatch");
  Tensor dx(x.n, x.w, in_);
  const std::size_t rows = static_cast<std::size_t>(x.n) * x.w;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.data[r * in_];
    const double* gr = &g.data[r * out_];
    double* dxr = &dx.data[r * in_];
    for (int o = 0; o < out_; ++o) {
      const double go = gr[o];
      bias_.grad[static_cast<std::size_t>(o)] += go;
      if (go == 0.0) continue;
      const double* wo = &weight_.value[static_cast<std::size_t>(o) * in_];
      double* dwo = &weight_.grad[static_cast<std::size_t>(o) * in_];
      for (int j = 0; j < in_; ++j) {
        dwo[j] += go * xr[j];
        dxr[j] += go * wo[j];
      }
    }
  }
  return dx;
}

// ---- activations ----------------------------------------------------------

Tensor Relu::forward(const Tensor& x) const {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor Relu::forward_train(const Tensor& x, Rng&) {
  cache_ = x;
  return forward(x);
}

Tensor Relu::backward(const Tensor& g) {
  require(g.same_shape(cache_), "relu gradient " + shape_str(g) + " mismatch");
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    if (!(cache_.data[i] > 0.0)) dx.data[i] = 0.0;
  }
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x) const {
  Tensor y = x;
  for (auto& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

Tensor Sigmoid::forward_train(const Tensor& x, Rng&) {
  out_cache_ = forward(x);
  return out_cache_;
}

Tensor Sigmoid::backward(const Tensor& g) {
  require(g.same_shape(out_cache_), "sigmoid gradient " + shape_str(g) + " mismatch");
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    const double s = out_cache_.data[i];
    dx.data[i] *= s * (1.0 - s);
  }
  return dx;
}

// ---- pooling / upsampling -------------------------------------------------

std::pair<int, int> MaxPool2::output_shape(int w, int c) const {
  require(w >= 2, "maxpool2 needs width >= 2");
  return {w / 2, c};
}

Tensor MaxPool2::forward(const Tensor& x) const {
  require(x.w >= 2, "maxpool2 input " + shape_str(x) + " too narrow");
  Tensor y(x.n, x.w / 2, x.c);
  for (int i = 0; i < x.n; ++i) {
    for (int p = 0; p < y.w; ++p) {
      for (int ch = 0; ch < x.c; ++ch) {
        y.at(i, p, ch) = std::max(x.at(i, 2 * p, ch), x.at(i, 2 * p + 1, ch));
      }
    }
  }
  return y;
}

Tensor MaxPool2::forward_train(const Tensor& x, Rng&) {
  require(x.w >= 2, "maxpool2 input " + shape_str(x) + " too narrow");
  in_w_ = x.w;
  Tensor y(x.n, x.w / 2, x.c);
  argmax_.assign(y.size(), 0);
  for (int i = 0; i < x.n; ++i) {
    for (int p = 0; p < y.w; ++p) {
      for (int ch = 0; ch < x.c; ++ch) {
        const double a = x.at(i, 2 * p, ch);
        const double b = x.at(i, 2 * p + 1, ch);
        // Ties go to the left element.
        const bool right = b > a;
        const auto idx = y.index(i, p, ch);
        y.data[idx] = right ? b : a;
        argmax_[idx] = static_cast<std::uint32_t>(x.index(i, 2 * p + (right ? 1 : 0), ch));
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& g) {
  require(g.size() == argmax_.size(), "maxpool2 gradient " + shape_str(g) + " mismatch");
  Tensor dx(g.n, in_w_, g.c);
  for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[argmax_[i]] += g.data[i];
  return dx;
}

Tensor Upsample2::forward(const Tensor& x) const {
  Tensor y(x.n, 2 * x.w, x.c);
  for (int i = 0; i < x.n; ++i) {
    for (int p = 0; p < y.w; ++p) {
      for (int ch = 0; ch < x.c; ++ch) y.at(i, p, ch) = x.at(i, p / 2, ch);
    }
  }
  return y;
}

Tensor Upsample2::forward_train(const Tensor& x, Rng&) { return forward(x); }

Tensor Upsample2::backward(const Tensor& g) {
  require(g.w % 2 == 0, "upsample2 gradient " + shape_str(g) + " has odd width");
  Tensor dx(g.n, g.w / 2, g.c);
  for (int i = 0; i < g.n; ++i) {
    for (int p = 0; p < g.w; ++p) {
      for (int ch = 0; ch < g.c; ++ch) dx.at(i, p / 2, ch) += g.at(i, p, ch);
    }
  }
  return dx;
}

// ---- dropout --------------------------------------------------------------

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorKind::kConfig, "dropout rate must be in [0, 1)");
}

nlohmann::json Dropout::config() const { return {{"kind", kind()}, {"rate", rate_}}; }

Tensor Dropout::forward_train(const Tensor& x, Rng& rng) {
  mask_.assign(x.size(), 0.0);
  const double keep = 1.0 / (1.0 - rate_);
  Tensor y = x;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    mask_[i] = uniform01(rng) >= rate_ ? keep : 0.0;
    y.data[i] *= mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& g) {
  require(g.size() == mask_.size(), "dropout gradient " + shape_str(g) + " mismatch");
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= mask_[i];
  return dx;
}

// ---- reshapes -------------------------------------------------------------

Tensor Flatten::forward(const Tensor& x) const {
  Tensor y = x;
  y.w = 1;
  y.c = x.w * x.c;
  return y;
}

Tensor Flatten::forward_train(const Tensor& x, Rng&) {
  w_ = x.w;
  c_ = x.c;
  return forward(x);
}

Tensor Flatten::backward(const Tensor& g) {
  require(g.w == 1 && g.c == w_ * c_, "flatten gradient " + shape_str(g) + " mismatch");
  Tensor dx = g;
  dx.w = w_;
  dx.c = c_;
  return dx;
}

Unflatten::Unflatten(int w, int c) : w_(w), c_(c) {
  require(w > 0 && c > 0, "unflatten needs positive extents");
}

std::pair<int, int> Unflatten::output_shape(int w, int c) const {
  require(w == 1 && c == w_ * c_, "unflatten expects [*, 1, " + std::to_string(w_ * c_) + "]");
  return {w_, c_};
}

nlohmann::json Unflatten::config() const { return {{"kind", kind()}, {"w", w_}, {"c", c_}}; }

Tensor Unflatten::forward(const Tensor& x) const {
  require(x.w == 1 && x.c == w_ * c_, "unflatten input " + shape_str(x) + " mismatch");
  Tensor y = x;
  y.w = w_;
  y.c = c_;
  return y;
}

Tensor Unflatten::forward_train(const Tensor& x, Rng&) { return forward(x); }

Tensor Unflatten::backward(const Tensor& g) {
  require(g.w == w_ && g.c == c_, "unflatten gradient " + shape_str(g) + " mismatch");
  Tensor dx = g;
  dx.w = 1;
  dx.c = w_ * c_;
  return dx;
}

// ---- Sequential -----------------------------------------------------------

Tensor Sequential::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers_) h = l->forward(h);
  return h;
}

Tensor Sequential::forward_train(const Tensor& x, Rng& rng) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward_train(h, rng);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

void Sequential::zero_grad() {
  for (auto* p : params()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (auto* p : l->params()) out.push_back(p);
  }
  return out;
}

std::size_t Sequential::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->value.size();
  return n;
}

std::vector<std::pair<int, int>> Sequential::shape_trace(int w, int c) const {
  std::vector<std::pair<int, int>> out;
  out.reserve(layers_.size());
  std::pair<int, int> s{w, c};
  for (const auto& l : layers_) {
    s = l->output_shape(s.first, s.second);
    out.push_back(s);
  }
  return out;
}

nlohmann::json Sequential::architecture() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers_) arr.push_back(l->config());
  return arr;
}

Sequential Sequential::from_architecture(const nlohmann::json& arch) {
  if (!arch.is_array()) throw Error(ErrorKind::kParse, "architecture must be an array of layers");
  Sequential s;
  for (const auto& cfg : arch) {
    const auto kind = cfg.at("kind").get<std::string>();
    if (kind == "conv1d") {
      s.add<Conv1d>(cfg.at("in").get<int>(), cfg.at("out").get<int>(), cfg.at("kernel").get<int>());
    } else if (kind == "dense") {
      s.add<Dense>(cfg.at("in").get<int>(), cfg.at("out").get<int>());
    } else if (kind == "relu") {
      s.add<Relu>();
    } else if (kind == "sigmoid") {
      s.add<Sigmoid>();
    } else if (kind == "maxpool2") {
      s.add<MaxPool2>();
    } else if (kind == "upsample2") {
      s.add<Upsample2>();
    } else if (kind == "dropout") {
      s.add<Dropout>(cfg.at("rate").get<double>());
    } else if (kind == "flatten") {
      s.add<Flatten>();
    } else if (kind == "unflatten") {
      s.add<Unflatten>(cfg.at("w").get<int>(), cfg.at("c").get<int>());
    } else {
      throw Error(ErrorKind::kParse, "unknown layer kind '" + kind + "'");
    }
  }
  return s;
}

// ---- Adam -----------------------------------------------------------------

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0)) throw Error(ErrorKind::kConfig, "learning rate must be >= 0");
}

void Adam::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  require(m_.size() == params.size(), "optimizer bound to a different parameter set");
  ++t_;
  if (lr_ == 0.0) return;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---- loss -----------------------------------------------------------------

double bce_mean(const Tensor& y, const Tensor& yhat, const std::vector<std::uint8_t>& mask) {
  require(y.same_shape(yhat), "bce: target " + shape_str(y) + " vs output " + shape_str(yhat));
  require(mask.empty() || mask.size() == y.size(), "bce: mask size mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double p = std::clamp(yhat.data[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double t = y.data[i];
    sum += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

Tensor bce_grad(const Tensor& y, const Tensor& yhat, const std::vector<std::uint8_t>& mask) {
  require(y.same_shape(yhat), "bce: target " + shape_str(y) + " vs output " + shape_str(yhat));
  require(mask.empty() || mask.size() == y.size(), "bce: mask size mismatch");
  std::size_t count = mask.empty() ? y.size() : 0;
  if (!mask.empty()) {
    for (auto m : mask) count += m ? 1 : 0;
  }
  Tensor g(y.n, y.w, y.c);
  if (count == 0) return g;
  const double scale = 1.0 / static_cast<double>(count);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    // The clamped loss is flat outside [eps, 1 - eps].
    const double p = yhat.data[i];
    if (p < kBceEpsilon || p > 1.0 - kBceEpsilon) continue;
    g.data[i] = scale * (p - y.data[i]) / (p * (1.0 - p));
  }
  return g;
}

}  // namespace evcma::nn
