#pragma once

// Exhaustive reference for small market instances. Each EVCP has a short window
// of consecutive slots and rates on a 0.5 kW grid; every feasible rate vector is
// enumerated and the cheapest one (by slot price, ties to the lexicographically
// earliest) is kept. Costs are then computed from first principles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

struct SmallEvcp {
  int first_slot = 0;  // 0-based
  int window = 1;      // consecutive slots, <= 4
  double demand_kwh = 0.0;
};

struct SmallMarket {
  std::vector<SmallEvcp> evcps;
  std::vector<double> da;  // 24
  std::vector<double> rt;  // 288
  double cap_kw = 2.0;
  double eenc_da = 0.5;
  double eenc_rt = 0.5;
  double pen_rt = 0.06;
};

inline constexpr double kStepKw = 0.5;
inline constexpr double kSlotH = 1.0 / 12.0;

struct EvcpPlan {
  std::vector<double> rate;  // over the window
  double ens = 0.0;
};

/// Cheapest feasible rate vector under `slot_price` delivering min(d, cap*window*h).
inline EvcpPlan best_plan(const SmallEvcp& e, double cap, const std::function<double(int)>& slot_price) {
  const int levels = static_cast<int>(std::lround(cap / kStepKw));
  const double deliverable = std::min(e.demand_kwh, cap * e.window * kSlotH);
  const long long target_units = std::llround(deliverable / (kStepKw * kSlotH));
  EvcpPlan best;
  best.ens = std::max(0.0, e.demand_kwh - cap * e.window * kSlotH);
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> u(static_cast<std::size_t>(e.window), 0);
  const auto visit = [&](auto&& self, int pos, long long used) -> void {
    if (pos == e.window) {
      if (used != target_units) return;
      double cost = 0.0;
      for (int i = 0; i < e.window; ++i) cost += u[i] * kStepKw * slot_price(e.first_slot + i);
      if (cost < best_cost - 1e-15) {
        best_cost = cost;
        best.rate.assign(u.begin(), u.end());
        for (auto& r : best.rate) r *= kStepKw;
      }
      return;
    }
    for (int k = 0; k <= levels; ++k) {
      u[static_cast<std::size_t>(pos)] = k;
      self(self, pos + 1, used + k);
    }
    u[static_cast<std::size_t>(pos)] = 0;
  };
  visit(visit, 0, 0);
  return best;
}

struct SmallCosts {
  std::vector<double> bid;  // 24
  double ch_da = 0.0;
  double eenc_da = 0.0;
  double inc = 0.0;
  double pen = 0.0;
  double eenc_rt = 0.0;
  double total = 0.0;
};

/// DA stage from `history` scheduled at DA prices, RT stage from `realized` at RT prices.
inline SmallCosts settle(const SmallMarket& m, const std::vector<SmallEvcp>& history,
                         const std::vector<SmallEvcp>& realized) {
  SmallCosts c;
  std::vector<double> da_load(288, 0.0), rt_load(288, 0.0);
  double ens_da = 0.0, ens_rt = 0.0;
  for (const auto& e : history) {
    const auto p = best_plan(e, m.cap_kw, [&](int s) { return m.da[static_cast<std::size_t>(s / 12)]; });
    for (int i = 0; i < e.window; ++i) da_load[static_cast<std::size_t>(e.first_slot + i)] += p.rate[i];
    ens_da += p.ens;
  }
  for (const auto& e : realized) {
    const auto p = best_plan(e, m.cap_kw, [&](int s) { return m.rt[static_cast<std::size_t>(s)]; });
    for (int i = 0; i < e.window; ++i) rt_load[static_cast<std::size_t>(e.first_slot + i)] += p.rate[i];
    ens_rt += p.ens;
  }
  c.bid.assign(24, 0.0);
  for (int h = 0; h < 24; ++h) {
    double s = 0.0;
    for (int k = 0; k < 12; ++k) s += da_load[static_cast<std::size_t>(h * 12 + k)];
    c.bid[static_cast<std::size_t>(h)] = s / 12.0;
    c.ch_da += c.bid[static_cast<std::size_t>(h)] * m.da[static_cast<std::size_t>(h)];
  }
  c.eenc_da = ens_da * m.eenc_da;
  for (int t = 0; t < 288; ++t) {
    const double d = rt_load[static_cast<std::size_t>(t)] - c.bid[static_cast<std::size_t>(t / 12)];
    if (d > 0) c.inc += d * m.rt[static_cast<std::size_t>(t)] * kSlotH;
    if (d < 0) c.pen += -d * m.pen_rt * kSlotH;
  }
  c.eenc_rt = ens_rt * m.eenc_rt * kSlotH;
  c.total = c.ch_da + c.eenc_da + c.inc + c.pen + c.eenc_rt;
  return c;
}

}  // namespace oracle
