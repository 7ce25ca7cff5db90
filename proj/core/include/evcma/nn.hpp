#pragma once

// Small 1-D convolutional network toolkit: layers with analytic backward passes,
// a sequential container and an Adam optimizer. Double precision, single thread.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace evcma::nn {

/// Dense [n, w, c] array, channel fastest: data[(i * w + x) * c + ch].
struct Tensor {
  int n = 0;
  int w = 0;
  int c = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int w_, int c_, double fill = 0.0);

  std::size_t size() const noexcept { return data.size(); }
  double& at(int i, int x, int ch) { return data[index(i, x, ch)]; }
  double at(int i, int x, int ch) const { return data[index(i, x, ch)]; }
  std::size_t index(int i, int x, int ch) const noexcept {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(c) +
           static_cast<std::size_t>(ch);
  }
  bool same_shape(const Tensor& o) const noexcept { return n == o.n && w == o.w && c == o.c; }
};

struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;
};

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  /// Inference pass. Reentrant; dropout is the identity here.
  virtual Tensor forward(const Tensor& x) const = 0;
  /// Training pass; caches what backward needs.
  virtual Tensor forward_train(const Tensor& x, Rng& rng) = 0;
  /// Accumulates parameter gradients and returns dL/dx for the last forward_train.
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<Param*> params() { return {}; }
  virtual void init(Rng&) {}
  /// (width, channels) produced from an input of (w, c). Throws Error(kDimension).
  virtual std::pair<int, int> output_shape(int w, int c) const = 0;
  virtual nlohmann::json config() const;
};

class Conv1d final : public Layer {
 public:
  /// Kernel 3, stride 1, zero "same" padding along the width axis.
  Conv1d(int in_channels, int out_channels, int kernel = 3);

  std::string kind() const override { return "conv1d"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  void init(Rng& rng) override;
  std::pair<int, int> output_shape(int w, int c) const override;
  nlohmann::json config() const override;

  Param& weight() { return weight_; }  // [out][k][in]
  Param& bias() { return bias_; }

 private:
  int in_;
  int out_;
  int k_;
  Param weight_;
  Param bias_;
  Tensor cache_;
};

/// Fully connected over the channel axis at every width position.
class Dense final : public Layer {
 public:
  Dense(int in_features, int out_features);

  std::string kind() const override { return "dense"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  void init(Rng& rng) override;
  std::pair<int, int> output_shape(int w, int c) const override;
  nlohmann::json config() const override;

  Param& weight() { return weight_; }  // [out][in]
  Param& bias() { return bias_; }

 private:
  int in_;
  int out_;
  Param weight_;
  Param bias_;
  Tensor cache_;
};

class Relu final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::pair<int, int> output_shape(int w, int c) const override { return {w, c}; }

 private:
  Tensor cache_;
};

class Sigmoid final : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::pair<int, int> output_shape(int w, int c) const override { return {w, c}; }

 private:
  Tensor out_cache_;
};

/// Window 2, stride 2 along the width; odd widths drop the last column.
class MaxPool2 final : public Layer {
 public:
  std::string kind() const override { return "maxpool2"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::pair<int, int> output_shape(int w, int c) const override;

 private:
  int in_w_ = 0;
  std::vector<std::uint32_t> argmax_;
};

/// Nearest-neighbour x2 along the width.
class Upsample2 final : public Layer {
 public:
  std::string kind() const override { return "upsample2"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::pair<int, int> output_shape(int w, int c) const override { return {2 * w, c}; }
};

/// Inverted dropout: kept units are scaled by 1/(1-p) during training.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate);

  std::string kind() const override { return "dropout"; }
  Tensor forward(const Tensor& x) const override { return x; }
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::pair<int, int> output_shape(int w, int c) const override { return {w, c}; }
  nlohmann::json config() const override;
  double rate() const noexcept { return rate_; }

 private:
  double rate_;
  std::vector<double> mask_;
};

/// [n, w, c] -> [n, 1, w*c].
class Flatten final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::pair<int, int> output_shape(int w, int c) const override { return {1, w * c}; }

 private:
  int w_ = 0;
  int c_ = 0;
};

/// [n, 1, w*c] -> [n, w, c].
class Unflatten final : public Layer {
 public:
  Unflatten(int w, int c);

  std::string kind() const override { return "unflatten"; }
  Tensor forward(const Tensor& x) const override;
  Tensor forward_train(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::pair<int, int> output_shape(int w, int c) const override;
  nlohmann::json config() const override;

 private:
  int w_;
  int c_;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void add_layer(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x, Rng& rng);
  Tensor backward(const Tensor& grad_out);

  void init(Rng& rng);
  void zero_grad();
  std::vector<Param*> params();
  std::size_t parameter_count();

  /// (width, channels) after each layer, starting from (w, c).
  std::vector<std::pair<int, int>> shape_trace(int w, int c) const;

  std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  nlohmann::json architecture() const;
  static Sequential from_architecture(const nlohmann::json& arch);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const std::vector<Param*>& params);
  double lr() const noexcept { return lr_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy over elements with a non-zero weight; yhat is clamped
/// to [eps, 1 - eps]. An empty `mask` weights every element.
double bce_mean(const Tensor& y, const Tensor& yhat, const std::vector<std::uint8_t>& mask = {});

/// d(bce_mean)/d(yhat). Zero where yhat lies outside the clamp range.
Tensor bce_grad(const Tensor& y, const Tensor& yhat, const std::vector<std::uint8_t>& mask = {});

}  // namespace evcma::nn
