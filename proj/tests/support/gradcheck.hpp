#pragma once

// Central-difference gradient check of mean BCE through a Sequential network.

#include <cmath>
#include <cstdint>
#include <vector>

#include "evcma/nn.hpp"

namespace gradcheck {

struct Result {
  double param_rel_error = 0.0;
  double input_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom < 1e-300 ? 0.0 : std::sqrt(diff) / denom;
}

/// The dropout mask is pinned by re-seeding before every evaluation. `stride` > 1
/// checks every stride-th parameter only.
inline Result check(evcma::nn::Sequential& net, const evcma::nn::Tensor& x, const evcma::nn::Tensor& y,
                    std::uint64_t mask_seed, std::size_t stride = 1, double h = 1e-5) {
  using evcma::nn::Rng;
  const auto loss = [&](const evcma::nn::Tensor& in) {
    Rng rng(mask_seed);
    return evcma::nn::bce_mean(y, net.forward_train(in, rng));
  };

  net.zero_grad();
  Rng rng(mask_seed);
  const auto out = net.forward_train(x, rng);
  const auto dx = net.backward(evcma::nn::bce_grad(y, out));

  std::vector<double> analytic, numeric;
  for (auto* p : net.params()) {
    const std::vector<double> g = p->grad;
    for (std::size_t i = 0; i < p->value.size(); i += stride) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss(x);
      p->value[i] = keep - h;
      const double down = loss(x);
      p->value[i] = keep;
      analytic.push_back(g[i]);
      numeric.push_back((up - down) / (2 * h));
    }
  }
  Result r;
  r.checked = analytic.size();
  r.param_rel_error = rel_error(analytic, numeric);

  std::vector<double> a_in, n_in;
  auto xp = x;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    xp.data[i] = x.data[i] + h;
    const double up = loss(xp);
    xp.data[i] = x.data[i] - h;
    const double down = loss(xp);
    xp.data[i] = x.data[i];
    a_in.push_back(dx.data[i]);
    n_in.push_back((up - down) / (2 * h));
  }
  r.input_rel_error = rel_error(a_in, n_in);
  return r;
}

}  // namespace gradcheck
