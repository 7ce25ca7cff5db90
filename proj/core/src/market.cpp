#include "evcma/market.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "evcma/error.hpp"

namespace evcma {
namespace {

void require_market_grid(const SlotGrid& grid) {
  if (grid.n_step() != kMarketIntervals || grid.slot_minutes() != 5) {
    throw Error(ErrorKind::kDimension,
                "market settlement needs a 24 h grid with 5 min slots, got " +
                    std::to_string(grid.horizon_hours()) + " h / " +
                    std::to_string(grid.slot_minutes()) + " min");
  }
}

double dot_interval_cost(std::span<const double> kw, std::span<const double> price,
                         double length) {
  double cost = 0.0;
  for (std::size_t i = 0; i < kw.size(); ++i) cost += kw[i] * price[i] * length;
  return cost;
}

}  // namespace

void PriceSeries::validate() const {
  if (da.size() != static_cast<std::size_t>(kMarketHours)) {
    throw Error(ErrorKind::kDimension,
                "expected 24 DA prices, got " + std::to_string(da.size()));
  }
  if (rt.size() != static_cast<std::size_t>(kMarketIntervals)) {
    throw Error(ErrorKind::kDimension,
                "expected 288 RT prices, got " + std::to_string(rt.size()));
  }
  const auto nonneg = [](double p) { return p >= 0.0 && std::isfinite(p); };
  if (!std::all_of(da.begin(), da.end(), nonneg) || !std::all_of(rt.begin(), rt.end(), nonneg) ||
      !nonneg(eenc_da) || !nonneg(eenc_rt) || !nonneg(pen_rt)) {
    throw Error(ErrorKind::kConfig, "prices must be finite and non-negative");
  }
}

std::vector<double> PriceSeries::da_per_interval() const {
  std::vector<double> out;
  out.reserve(kMarketIntervals);
  for (int h = 0; h < kMarketHours; ++h) {
    for (int i = 0; i < kIntervalsPerHour; ++i) out.push_back(da.at(static_cast<std::size_t>(h)));
  }
  return out;
}

void RateCap::validate() const {
  if (!(max_rate_kw > 0.0) || !std::isfinite(max_rate_kw)) {
    throw Error(ErrorKind::kConfig, "rate cap must be positive");
  }
}

std::vector<double> FleetSchedule::hourly_mean_kw() const {
  if (total_kw.size() != static_cast<std::size_t>(kMarketIntervals)) {
    throw Error(ErrorKind::kDimension, "hourly aggregation needs 288 intervals");
  }
  std::vector<double> out(kMarketHours, 0.0);
  for (int h = 0; h < kMarketHours; ++h) {
    double sum = 0.0;
    for (int i = 0; i < kIntervalsPerHour; ++i) sum += total_kw[static_cast<std::size_t>(h * 12 + i)];
    out[static_cast<std::size_t>(h)] = sum / kIntervalsPerHour;
  }
  return out;
}

FleetSchedule schedule_charging(const FleetSnapshot& fleet, std::span<const double> slot_prices,
                                const RateCap& cap) {
  cap.validate();
  const auto& grid = fleet.grid();
  const auto n = static_cast<std::size_t>(grid.n_step());
  if (slot_prices.size() != n) {
    throw Error(ErrorKind::kDimension, "price vector has " + std::to_string(slot_prices.size()) +
                                           " entries for " + std::to_string(n) + " slots");
  }
  const double h = grid.slot_hours();
  const double slot_energy = cap.max_rate_kw * h;

  FleetSchedule out;
  out.total_kw.assign(n, 0.0);
  out.evcps.reserve(fleet.size());
  std::vector<int> order;
  for (const auto& req : fleet.requests()) {
    const auto av = build_availability(req, grid);
    order.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (av.bits[i]) order.push_back(static_cast<int>(i));
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return slot_prices[static_cast<std::size_t>(a)] < slot_prices[static_cast<std::size_t>(b)];
    });

    EvcpSchedule es;
    es.evcp_id = req.evcp_id;
    es.rate_kw.assign(n, 0.0);
    es.demand_kwh = req.demand_kwh;
    const double deliverable = cap.max_rate_kw * av.total_available * h;
    es.ens_kwh = std::max(0.0, req.demand_kwh - deliverable);
    es.delivered_kwh = es.ens_kwh > 0.0 ? deliverable : req.demand_kwh;
    // Saturated requests run every available slot at the cap.
    double remaining = es.ens_kwh > 0.0 ? HUGE_VAL : es.delivered_kwh;
    for (int idx : order) {
      if (remaining <= slot_energy * 1e-12) break;
      const double take = std::min(remaining, slot_energy);
      es.rate_kw[static_cast<std::size_t>(idx)] = take == slot_energy ? cap.max_rate_kw : take / h;
      remaining -= take;
    }
    for (std::size_t i = 0; i < n; ++i) out.total_kw[i] += es.rate_kw[i];
    out.demand_kwh += es.demand_kwh;
    out.delivered_kwh += es.delivered_kwh;
    out.ens_kwh += es.ens_kwh;
    out.evcps.push_back(std::move(es));
  }
  return out;
}

DaCommitment estimate_da_demand(std::span<const FleetSnapshot> history, int k_samples,
                                std::uint64_t seed, const PriceSeries& prices,
                                const RateCap& cap) {
  if (history.empty()) throw Error(ErrorKind::kConfig, "DA estimate needs at least one day");
  if (k_samples <= 0) throw Error(ErrorKind::kConfig, "DA estimate needs k_samples >= 1");
  prices.validate();
  for (const auto& day : history) require_market_grid(day.grid());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, history.size() - 1);
  std::vector<int> multiplicity(history.size(), 0);
  for (int k = 0; k < k_samples; ++k) ++multiplicity[pick(rng)];

  const auto da_prices = prices.da_per_interval();
  DaCommitment out;
  out.bid_kw.assign(kMarketHours, 0.0);
  for (std::size_t d = 0; d < history.size(); ++d) {
    if (multiplicity[d] == 0) continue;
    const auto sched = schedule_charging(history[d], da_prices, cap);
    const auto hourly = sched.hourly_mean_kw();
    const double w = static_cast<double>(multiplicity[d]);
    for (int h = 0; h < kMarketHours; ++h) {
      out.bid_kw[static_cast<std::size_t>(h)] += w * hourly[static_cast<std::size_t>(h)];
    }
    out.ens_kwh += w * sched.ens_kwh;
    out.demand_kwh += w * sched.demand_kwh;
  }
  for (auto& b : out.bid_kw) b /= k_samples;
  out.ens_kwh /= k_samples;
  out.demand_kwh /= k_samples;
  return out;
}

DaCosts settle_da(std::span<const double> bid_kw, const PriceSeries& prices, double ens_da_kwh) {
  prices.validate();
  if (bid_kw.size() != static_cast<std::size_t>(kMarketHours)) {
    throw Error(ErrorKind::kDimension, "expected 24 DA bids, got " + std::to_string(bid_kw.size()));
  }
  DaCosts c;
  c.charging = dot_interval_cost(bid_kw, prices.da, kHourLength);
  c.eenc = ens_da_kwh * prices.eenc_da;
  c.total = c.charging + c.eenc;
  return c;
}

BalanceSplit split_balance(double da_kw, double rt_kw) {
  BalanceSplit s;
  if (rt_kw >= da_kw) {
    s.inc_kw = rt_kw - da_kw;
  } else {
    s.pen_kw = da_kw - rt_kw;
  }
  return s;
}

double snap_to_common_grid(std::vector<double>& a, std::vector<double>& b) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::fabs(v));
  for (double v : b) m = std::max(m, std::fabs(v));
  if (m == 0.0 || !std::isfinite(m)) return 0.0;
  const double q = std::ldexp(1.0, std::ilogb(m) - std::numeric_limits<double>::digits + 1);
  for (auto* v : {&a, &b}) {
    for (double& x : *v) x = std::nearbyint(x / q) * q;
  }
  return q;
}

MarketLedger settle_rt(const DaCommitment& da, FleetSchedule rt_schedule,
                       const PriceSeries& prices) {
  prices.validate();
  if (da.bid_kw.size() != static_cast<std::size_t>(kMarketHours)) {
    throw Error(ErrorKind::kDimension, "expected 24 DA bids, got " + std::to_string(da.bid_kw.size()));
  }
  if (rt_schedule.total_kw.size() != static_cast<std::size_t>(kMarketIntervals)) {
    throw Error(ErrorKind::kDimension, "RT schedule must cover 288 intervals");
  }
  MarketLedger L;
  L.da_bid_kw = da.bid_kw;
  L.demand_da_kwh = da.demand_kwh;
  L.ens_da_kwh = da.ens_kwh;
  L.rt_load_kw = rt_schedule.total_kw;
  snap_to_common_grid(L.da_bid_kw, L.rt_load_kw);
  L.inc_kw.assign(kMarketIntervals, 0.0);
  L.pen_kw.assign(kMarketIntervals, 0.0);
  for (int hour = 1; hour <= kMarketHours; ++hour) {
    const double bid = L.da_bid_kw[static_cast<std::size_t>(hour - 1)];
    for (int k = 1; k <= kIntervalsPerHour; ++k) {
      const auto i = static_cast<std::size_t>(interval_index(hour, k));
      const auto split = split_balance(bid, L.rt_load_kw[i]);
      L.pen_kw[i] = split.pen_kw;
      L.inc_kw[i] = split.inc_kw;
      L.cost_inc_rt += split.inc_kw * prices.rt[i] * kIntervalLength;
      L.cost_pen_rt += split.pen_kw * prices.pen_rt * kIntervalLength;
    }
  }
  L.demand_rt_kwh = rt_schedule.demand_kwh;
  L.ens_rt_kwh = rt_schedule.ens_kwh;
  for (const auto& e : rt_schedule.evcps) L.cost_eenc_rt += e.ens_kwh * prices.eenc_rt * kIntervalLength;
  L.cost_rt = L.cost_inc_rt + L.cost_pen_rt + L.cost_eenc_rt;

  const auto dac = settle_da(L.da_bid_kw, prices, da.ens_kwh);
  L.cost_ch_da = dac.charging;
  L.cost_eenc_da = dac.eenc;
  L.cost_da = dac.total;
  L.cost_total = L.cost_da + L.cost_rt;
  L.rt_schedule = std::move(rt_schedule);
  return L;
}

MarketLedger settle_rt(const DaCommitment& da, const FleetSnapshot& rt_fleet,
                       const PriceSeries& prices, const RateCap& cap) {
  require_market_grid(rt_fleet.grid());
  prices.validate();
  return settle_rt(da, schedule_charging(rt_fleet, prices.rt, cap), prices);
}

double total_cost(const MarketLedger& ledger) { return ledger.cost_total; }

SurchargeReport surcharge(const MarketLedger& before, const MarketLedger& after) {
  SurchargeReport r;
  r.before = total_cost(before);
  r.after = total_cost(after);
  r.surcharge = r.after - r.before;
  r.percent = r.before != 0.0 ? 100.0 * r.surcharge / r.before : 0.0;
  return r;
}

nlohmann::json to_json(const MarketLedger& L) {
  nlohmann::json evcps = nlohmann::json::array();
  for (const auto& e : L.rt_schedule.evcps) {
    evcps.push_back({{"evcp_id", e.evcp_id},
                     {"demand_rt_kwh", e.demand_kwh},
                     {"delivered_kwh", e.delivered_kwh},
                     {"ens_rt_kwh", e.ens_kwh}});
  }
  return {
      {"da_bid_kw", L.da_bid_kw},
      {"rt_load_kw", L.rt_load_kw},
      {"inc_kw", L.inc_kw},
      {"pen_kw", L.pen_kw},
      {"demand_da_kwh", L.demand_da_kwh},
      {"ens_da_kwh", L.ens_da_kwh},
      {"demand_rt_kwh", L.demand_rt_kwh},
      {"ens_rt_kwh", L.ens_rt_kwh},
      {"evcps", evcps},
      {"costs",
       {{"ch_da", L.cost_ch_da},
        {"eenc_da", L.cost_eenc_da},
        {"da", L.cost_da},
        {"inc_rt", L.cost_inc_rt},
        {"pen_rt", L.cost_pen_rt},
        {"eenc_rt", L.cost_eenc_rt},
        {"rt", L.cost_rt},
        {"total", L.cost_total}}},
  };
}

nlohmann::json to_json(const SurchargeReport& r) {
  return {{"before", r.before}, {"after", r.after}, {"surcharge", r.surcharge},
          {"percent", r.percent}};
}

PriceSeries read_price_csv(std::istream& da_csv, std::istream& rt_csv) {
  PriceSeries p;
  const auto da = csv::read(da_csv, {"hour", "da_price"}, "DA price csv");
  const auto rt = csv::read(rt_csv, {"hour", "interval", "rt_price"}, "RT price csv");
  if (da.rows.size() != static_cast<std::size_t>(kMarketHours)) {
    throw Error(ErrorKind::kDimension,
                "DA price csv: expected 24 hourly rows, got " + std::to_string(da.rows.size()));
  }
  if (rt.rows.size() != static_cast<std::size_t>(kMarketIntervals)) {
    throw Error(ErrorKind::kDimension,
                "RT price csv: expected 288 rows, got " + std::to_string(rt.rows.size()));
  }
  p.da.assign(kMarketHours, -1.0);
  p.rt.assign(kMarketIntervals, -1.0);
  std::vector<bool> seen_da(kMarketHours, false), seen_rt(kMarketIntervals, false);
  for (std::size_t i = 0; i < da.rows.size(); ++i) {
    const int line = da.line_numbers[i];
    const auto hour = csv::parse_int(da.rows[i][0], "DA price csv", line);
    if (hour < 1 || hour > kMarketHours || seen_da[static_cast<std::size_t>(hour - 1)]) {
      throw Error(ErrorKind::kDimension, "DA price csv line " + std::to_string(line) +
                                             ": bad or repeated hour " + std::to_string(hour));
    }
    seen_da[static_cast<std::size_t>(hour - 1)] = true;
    p.da[static_cast<std::size_t>(hour - 1)] = csv::parse_double(da.rows[i][1], "DA price csv", line);
  }
  for (std::size_t i = 0; i < rt.rows.size(); ++i) {
    const int line = rt.line_numbers[i];
    const auto hour = csv::parse_int(rt.rows[i][0], "RT price csv", line);
    const auto k = csv::parse_int(rt.rows[i][1], "RT price csv", line);
    if (hour < 1 || hour > kMarketHours || k < 1 || k > kIntervalsPerHour) {
      throw Error(ErrorKind::kDimension,
                  "RT price csv line " + std::to_string(line) + ": hour/interval out of range");
    }
    const auto idx = static_cast<std::size_t>(interval_index(static_cast<int>(hour), static_cast<int>(k)));
    if (seen_rt[idx]) {
      throw Error(ErrorKind::kDimension,
                  "RT price csv line " + std::to_string(line) + ": repeated interval");
    }
    seen_rt[idx] = true;
    p.rt[idx] = csv::parse_double(rt.rows[i][2], "RT price csv", line);
  }
  return p;
}

PriceSeries read_price_csv_files(const std::string& da_path, const std::string& rt_path) {
  std::ifstream da(da_path);
  if (!da) throw Error(ErrorKind::kIo, "cannot open " + da_path);
  std::ifstream rt(rt_path);
  if (!rt) throw Error(ErrorKind::kIo, "cannot open " + rt_path);
  return read_price_csv(da, rt);
}

void write_da_price_csv(std::ostream& out, const PriceSeries& prices) {
  out << "hour,da_price\n";
  for (std::size_t h = 0; h < prices.da.size(); ++h) {
    out << h + 1 << ',' << csv::format_double(prices.da[h]) << '\n';
  }
}

void write_rt_price_csv(std::ostream& out, const PriceSeries& prices) {
  out << "hour,interval,rt_price\n";
  for (int h = 1; h <= kMarketHours; ++h) {
    for (int k = 1; k <= kIntervalsPerHour; ++k) {
      out << h << ',' << k << ','
          << csv::format_double(prices.rt.at(static_cast<std::size_t>(interval_index(h, k))))
          << '\n';
    }
  }
}

}  // namespace evcma
