#include "evcma/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>

#include "evcma/error.hpp"
#include "evcma/isolation_forest.hpp"

namespace evcma {
namespace {

using nlohmann::json;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

double round_to(double v, double step) { return std::round(v / step) * step; }

template <typename F>
double truncated(std::mt19937_64& rng, double lo, double hi, F draw) {
  for (int i = 0; i < 1000; ++i) {
    const double v = draw(rng);
    if (v >= lo && v <= hi) return v;
  }
  return std::clamp(draw(rng), lo, hi);
}

Slot slot_of_hour(double hour, const SlotGrid& grid) {
  double h = std::fmod(hour, 24.0);
  if (h < 0.0) h += 24.0;
  const int minutes = std::min(static_cast<int>(std::floor(h * 60.0)), 24 * 60 - 1);
  return minutes / grid.slot_minutes() + 1;
}

double circular_hour_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), 24.0);
  return std::min(d, 24.0 - d);
}

[[noreturn]] void bad_config(const std::string& msg) { throw Error(ErrorKind::kConfig, msg); }

// Strict reader: every key must be consumed or the object is rejected.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) bad_config(where_ + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& sub(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      bad_config(where_ + "." + key + " has the wrong type");
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    try {
      v = j_.at(key).get<T>();
    } catch (const json::exception&) {
      bad_config(where_ + "." + key + " has the wrong type");
    }
    out = v;
  }

  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) bad_config("unknown key " + where_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

FleetDistribution read_distribution(const json& j) {
  FleetDistribution d;
  Reader r(j, "fleet.distribution");
  r.get("morning_weight", d.morning_weight);
  r.get("morning_mean_h", d.morning_mean_h);
  r.get("morning_sd_h", d.morning_sd_h);
  r.get("evening_mean_h", d.evening_mean_h);
  r.get("evening_sd_h", d.evening_sd_h);
  r.get("duration_median_h", d.duration_median_h);
  r.get("duration_sigma", d.duration_sigma);
  r.get("duration_min_h", d.duration_min_h);
  r.get("duration_max_h", d.duration_max_h);
  r.get("demand_mean_kwh", d.demand_mean_kwh);
  r.get("demand_sd_kwh", d.demand_sd_kwh);
  r.get("demand_min_kwh", d.demand_min_kwh);
  r.get("demand_max_kwh", d.demand_max_kwh);
  r.get("max_rate_kw", d.max_rate_kw);
  r.done();
  d.validate();
  return d;
}

json distribution_json(const FleetDistribution& d) {
  return {{"morning_weight", d.morning_weight},       {"morning_mean_h", d.morning_mean_h},
          {"morning_sd_h", d.morning_sd_h},           {"evening_mean_h", d.evening_mean_h},
          {"evening_sd_h", d.evening_sd_h},           {"duration_median_h", d.duration_median_h},
          {"duration_sigma", d.duration_sigma},       {"duration_min_h", d.duration_min_h},
          {"duration_max_h", d.duration_max_h},       {"demand_mean_kwh", d.demand_mean_kwh},
          {"demand_sd_kwh", d.demand_sd_kwh},         {"demand_min_kwh", d.demand_min_kwh},
          {"demand_max_kwh", d.demand_max_kwh},       {"max_rate_kw", d.max_rate_kw}};
}

PriceModel read_price_model(const json& j) {
  PriceModel m;
  Reader r(j, "prices.model");
  r.get("base", m.base);
  r.get("morning_amp", m.morning_amp);
  r.get("morning_peak_h", m.morning_peak_h);
  r.get("morning_width_h", m.morning_width_h);
  r.get("evening_amp", m.evening_amp);
  r.get("evening_peak_h", m.evening_peak_h);
  r.get("evening_width_h", m.evening_width_h);
  r.get("rt_noise_sd", m.rt_noise_sd);
  r.get("eenc_da", m.eenc_da);
  r.get("eenc_rt", m.eenc_rt);
  r.get("pen_rt", m.pen_rt);
  r.done();
  m.validate();
  return m;
}

json price_model_json(const PriceModel& m) {
  return {{"base", m.base},
          {"morning_amp", m.morning_amp},
          {"morning_peak_h", m.morning_peak_h},
          {"morning_width_h", m.morning_width_h},
          {"evening_amp", m.evening_amp},
          {"evening_peak_h", m.evening_peak_h},
          {"evening_width_h", m.evening_width_h},
          {"rt_noise_sd", m.rt_noise_sd},
          {"eenc_da", m.eenc_da},
          {"eenc_rt", m.eenc_rt},
          {"pen_rt", m.pen_rt}};
}

BenignChangeModel read_benign(const json& j) {
  BenignChangeModel b;
  Reader r(j, "detector.benign");
  r.get("p_change", b.p_change);
  r.get("p_end", b.p_end);
  r.get("p_demand", b.p_demand);
  r.get("max_end_shift", b.max_end_shift);
  r.get("max_start_shift", b.max_start_shift);
  r.get("min_demand_step", b.min_demand_step);
  r.get("max_demand_step", b.max_demand_step);
  r.done();
  b.validate();
  return b;
}

json benign_json(const BenignChangeModel& b) {
  return {{"p_change", b.p_change},
          {"p_end", b.p_end},
          {"p_demand", b.p_demand},
          {"max_end_shift", b.max_end_shift},
          {"max_start_shift", b.max_start_shift},
          {"min_demand_step", b.min_demand_step},
          {"max_demand_step", b.max_demand_step}};
}

void require_positive(int v, const std::string& what) {
  if (v < 1) bad_config(what + " must be >= 1");
}

template <typename F>
auto staged(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw Error(e.kind(), stage, e.what());
  }
}

std::string type_key(int t) { return "type" + std::to_string(t); }

std::vector<int> attack_types(const ExperimentConfig& cfg) {
  if (cfg.attack) return cfg.attack->types;
  return {1, 2, 3, 4, 5, 6};
}

SampleSpec sample_spec(const ExperimentConfig& cfg) {
  SampleSpec s;
  s.n_evcp = cfg.detector->n_evcp;
  s.fleet = cfg.fleet.dist;
  s.benign = cfg.detector->benign;
  if (cfg.attack) {
    s.c_att = cfg.attack->c_att;
    s.hacked_fraction = cfg.attack->hacked_fraction;
  }
  return s;
}

json ledger_summary(const MarketLedger& L) {
  json j = to_json(L);
  j.erase("evcps");
  return j;
}

using Scorer = std::function<double(const NormalizedBatch&)>;

DetectorScores score_detector(const std::string& name, const Scorer& score,
                              const std::vector<NormalizedBatch>& calibration, double q,
                              const std::vector<NormalizedBatch>& heldout,
                              const std::map<int, std::vector<NormalizedBatch>>& test_normals,
                              const std::map<int, std::vector<NormalizedBatch>>& test_attacks) {
  DetectorScores s;
  s.name = name;
  std::vector<double> cal;
  cal.reserve(calibration.size());
  for (const auto& b : calibration) cal.push_back(score(b));
  s.threshold = calibrate_threshold(cal, q);

  int flagged = 0;
  for (const auto& b : heldout) flagged += score(b) > s.threshold ? 1 : 0;
  s.heldout_flagged_fraction =
      heldout.empty() ? 0.0 : static_cast<double>(flagged) / static_cast<double>(heldout.size());

  double normal_sum = 0.0;
  std::size_t normal_count = 0;
  for (const auto& [type, normals] : test_normals) {
    std::vector<std::uint8_t> pred, truth;
    for (const auto& b : normals) {
      const double v = score(b);
      normal_sum += v;
      ++normal_count;
      pred.push_back(v > s.threshold ? 1 : 0);
      truth.push_back(0);
    }
    double attack_sum = 0.0;
    const auto& attacks = test_attacks.at(type);
    for (const auto& b : attacks) {
      const double v = score(b);
      attack_sum += v;
      pred.push_back(v > s.threshold ? 1 : 0);
      truth.push_back(1);
    }
    s.mean_attack_score[type] = attacks.empty() ? 0.0 : attack_sum / static_cast<double>(attacks.size());
    const auto m = evaluate_predictions(pred, truth);
    s.per_type[type] = m;
    s.aggregate += m;
  }
  s.mean_normal_score = normal_count ? normal_sum / static_cast<double>(normal_count) : 0.0;
  return s;
}

std::vector<double> block_vector(const NormalizedBatch& b, int block) {
  const std::size_t width = static_cast<std::size_t>(kRowsPerBlock) * kDeltaColumns;
  const auto begin = b.data.data.begin() + static_cast<std::ptrdiff_t>(width * static_cast<std::size_t>(block));
  return {begin, begin + static_cast<std::ptrdiff_t>(width)};
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& name) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return mix64(master ^ mix64(h));
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void FleetDistribution::validate() const {
  const auto finite_pos = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!(morning_weight >= 0.0 && morning_weight <= 1.0)) bad_config("morning_weight must be in [0, 1]");
  if (!finite_pos(morning_sd_h) || !finite_pos(evening_sd_h)) bad_config("arrival sd must be > 0");
  if (!std::isfinite(morning_mean_h) || !std::isfinite(evening_mean_h)) bad_config("arrival means must be finite");
  if (!finite_pos(duration_median_h) || !(duration_sigma >= 0.0)) bad_config("duration parameters must be positive");
  if (!finite_pos(duration_min_h) || !(duration_max_h >= duration_min_h) || duration_max_h >= 24.0) {
    bad_config("duration bounds must satisfy 0 < min <= max < 24 h");
  }
  if (!finite_pos(demand_sd_kwh) || !std::isfinite(demand_mean_kwh)) bad_config("demand parameters must be finite, sd > 0");
  if (!finite_pos(demand_min_kwh) || !(demand_max_kwh >= demand_min_kwh)) {
    bad_config("demand bounds must satisfy 0 < min <= max");
  }
  if (!finite_pos(max_rate_kw)) bad_config("max_rate_kw must be > 0");
}

std::string evcp_name(int index, int n_evcp) {
  const int width = std::max(4, static_cast<int>(std::to_string(n_evcp).size()));
  auto digits = std::to_string(index);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return "EVCP" + digits;
}

FleetSnapshot generate_fleet(int n_evcp, const FleetDistribution& dist, std::uint64_t seed,
                             const SlotGrid& grid) {
  if (n_evcp < 1) bad_config("n_evcp must be >= 1");
  dist.validate();
  if (grid.horizon_hours() != 24) bad_config("synthetic fleets need a 24 h horizon");
  std::mt19937_64 rng(seed);
  const double h = grid.slot_hours();
  std::vector<ChargingRequest> reqs;
  reqs.reserve(static_cast<std::size_t>(n_evcp));
  const auto normal = [](double mean, double sd) {
    return [mean, sd](std::mt19937_64& g) { return mean + sd * standard_normal(g); };
  };
  for (int i = 1; i <= n_evcp; ++i) {
    const bool morning = uniform01(rng) < dist.morning_weight;
    const double arrival = morning ? dist.morning_mean_h + dist.morning_sd_h * standard_normal(rng)
                                   : dist.evening_mean_h + dist.evening_sd_h * standard_normal(rng);
    const double duration = truncated(rng, dist.duration_min_h, dist.duration_max_h, [&](std::mt19937_64& g) {
      return std::exp(std::log(dist.duration_median_h) + dist.duration_sigma * standard_normal(g));
    });
    const int ta = std::clamp(static_cast<int>(std::lround(duration / h)), 1, grid.n_step() - 1);
    double demand = truncated(rng, dist.demand_min_kwh, dist.demand_max_kwh,
                              normal(dist.demand_mean_kwh, dist.demand_sd_kwh));
    demand = std::min(demand, dist.max_rate_kw * ta * h);
    demand = std::max(0.01, std::floor(demand * 100.0) / 100.0);

    ChargingRequest r;
    r.evcp_id = evcp_name(i, n_evcp);
    r.start_slot = slot_of_hour(arrival, grid);
    r.end_slot = grid.wrap(static_cast<long long>(r.start_slot) + ta);
    r.demand_kwh = demand;
    reqs.push_back(std::move(r));
  }
  return FleetSnapshot(grid, std::move(reqs));
}

void PriceModel::validate() const {
  const auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!nonneg(base) || !nonneg(morning_amp) || !nonneg(evening_amp)) bad_config("price levels must be >= 0");
  if (!(morning_width_h > 0.0) || !(evening_width_h > 0.0)) bad_config("price peak widths must be > 0");
  if (!nonneg(rt_noise_sd) || !nonneg(eenc_da) || !nonneg(eenc_rt) || !nonneg(pen_rt)) {
    bad_config("price noise and penalty rates must be >= 0");
  }
}

PriceSeries generate_prices(const PriceModel& m, std::uint64_t seed) {
  m.validate();
  PriceSeries p;
  p.eenc_da = m.eenc_da;
  p.eenc_rt = m.eenc_rt;
  p.pen_rt = m.pen_rt;
  p.da.resize(kMarketHours);
  const auto bump = [](double hour, double peak, double width) {
    const double z = circular_hour_gap(hour, peak) / width;
    return std::exp(-0.5 * z * z);
  };
  for (int h = 0; h < kMarketHours; ++h) {
    const double mid = h + 0.5;
    p.da[static_cast<std::size_t>(h)] = m.base + m.morning_amp * bump(mid, m.morning_peak_h, m.morning_width_h) +
                                        m.evening_amp * bump(mid, m.evening_peak_h, m.evening_width_h);
  }
  std::mt19937_64 rng(seed);
  p.rt.resize(kMarketIntervals);
  for (int i = 0; i < kMarketIntervals; ++i) {
    const double da = p.da[static_cast<std::size_t>(i / kIntervalsPerHour)];
    p.rt[static_cast<std::size_t>(i)] = da * std::max(0.0, 1.0 + m.rt_noise_sd * standard_normal(rng));
  }
  return p;
}

void BenignChangeModel::validate() const {
  if (!(p_change >= 0.0 && p_change <= 1.0)) bad_config("p_change must be in [0, 1]");
  if (!(p_end >= 0.0 && p_demand >= 0.0 && p_end + p_demand <= 1.0)) {
    bad_config("p_end and p_demand must be >= 0 with p_end + p_demand <= 1");
  }
  if (max_end_shift < 1 || max_start_shift < 1) bad_config("benign shifts must be >= 1 slot");
  if (!(min_demand_step > 0.0) || !(max_demand_step >= min_demand_step)) {
    bad_config("benign demand steps must satisfy 0 < min <= max");
  }
}

FleetSnapshot evolve_benign(const FleetSnapshot& fleet, const BenignChangeModel& model,
                            std::uint64_t seed) {
  model.validate();
  const auto& grid = fleet.grid();
  std::mt19937_64 rng(seed);
  std::vector<ChargingRequest> out = fleet.requests();
  for (auto& r : out) {
    if (!(uniform01(rng) < model.p_change)) continue;
    const double kind = uniform01(rng);
    const int sign = (rng() & 1u) ? 1 : -1;
    if (kind < model.p_end) {
      const Slot e = grid.wrap(static_cast<long long>(r.end_slot) + sign * uniform_int(rng, 1, model.max_end_shift));
      if (e != r.start_slot) r.end_slot = e;
    } else if (kind < model.p_end + model.p_demand) {
      const double step = round_to(model.min_demand_step + uniform01(rng) * (model.max_demand_step - model.min_demand_step), 0.01);
      double d = r.demand_kwh + sign * step;
      if (d < 0.5) d = r.demand_kwh + step;
      r.demand_kwh = std::round(d * 100.0) / 100.0;
    } else {
      const Slot s = grid.wrap(static_cast<long long>(r.start_slot) + sign * uniform_int(rng, 1, model.max_start_shift));
      if (s != r.end_slot) r.start_slot = s;
    }
  }
  return FleetSnapshot(grid, std::move(out), grid.wrap(static_cast<long long>(fleet.timestamp_slot()) + 1));
}

DeltaMatrix normal_sample(const SampleSpec& spec, std::uint64_t seed, const SlotGrid& grid) {
  const auto fleet = generate_fleet(spec.n_evcp, spec.fleet, derive_seed(seed, "fleet"), grid);
  const auto next = evolve_benign(fleet, spec.benign, derive_seed(seed, "benign"));
  auto d = build_delta(fleet, next);
  d.label = SampleLabel::kNormal;
  d.attack_type = 0;
  return d;
}

DeltaMatrix attack_sample(const SampleSpec& spec, AttackType type, std::uint64_t seed,
                          const SlotGrid& grid) {
  const auto fleet = generate_fleet(spec.n_evcp, spec.fleet, derive_seed(seed, "fleet"), grid);
  const auto next = evolve_benign(fleet, spec.benign, derive_seed(seed, "benign"));
  const int hacked = static_cast<int>(std::lround(spec.hacked_fraction * spec.n_evcp));
  const auto cfg = make_attack_config(type, spec.c_att, mean_base_rate(fleet), spec.n_evcp, hacked,
                                      derive_seed(seed, "attack"));
  const auto plan = assign_targets(cfg, fleet.ids());
  const auto injected = inject(fleet, plan);
  std::vector<ChargingRequest> merged = next.requests();
  for (std::size_t i = 0; i < merged.size(); ++i) {
    if (plan.of(merged[i].evcp_id) != Manipulation::kUntouched) merged[i] = injected.requests()[i];
  }
  auto d = build_delta(fleet, FleetSnapshot(grid, std::move(merged), next.timestamp_slot()));
  d.label = SampleLabel::kAttack;
  d.attack_type = static_cast<int>(type);
  return d;
}


// ---- configuration ---------------------------------------------------------

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Reader top(j, "config");
  if (!top.has("seed")) bad_config("config.seed is required");
  top.get("seed", cfg.seed);

  if (top.has("grid")) {
    Reader g(top.sub("grid"), "grid");
    int horizon = 24;
    int slot = 5;
    g.get("horizon_hours", horizon);
    g.get("slot_minutes", slot);
    g.done();
    cfg.grid = SlotGrid(horizon, slot);
  }

  if (top.has("fleet")) {
    Reader f(top.sub("fleet"), "fleet");
    f.get("csv", cfg.fleet.csv);
    if (cfg.fleet.csv && (f.has("n_evcp") || f.has("distribution"))) {
      throw Error(ErrorKind::kConfig, "fleet: csv excludes n_evcp and distribution");
    }
    f.get("n_evcp", cfg.fleet.n_evcp);
    if (f.has("distribution")) cfg.fleet.dist = read_distribution(f.sub("distribution"));
    f.done();
    require_positive(cfg.fleet.n_evcp, "fleet.n_evcp");
  }

  if (top.has("prices")) {
    Reader p(top.sub("prices"), "prices");
    p.get("da_csv", cfg.prices.da_csv);
    p.get("rt_csv", cfg.prices.rt_csv);
    if (p.has("model")) cfg.prices.model = read_price_model(p.sub("model"));
    p.done();
    if (cfg.prices.da_csv.has_value() != cfg.prices.rt_csv.has_value()) {
      bad_config("prices.da_csv and prices.rt_csv must be given together");
    }
  }

  if (top.has("market")) {
    Reader m(top.sub("market"), "market");
    m.get("max_rate_kw", cfg.market.max_rate_kw);
    m.get("history_days", cfg.market.history_days);
    m.get("mc_samples", cfg.market.mc_samples);
    m.done();
    if (!(cfg.market.max_rate_kw > 0.0)) bad_config("market.max_rate_kw must be > 0");
    require_positive(cfg.market.history_days, "market.history_days");
    require_positive(cfg.market.mc_samples, "market.mc_samples");
  }

  if (top.has("attack")) {
    AttackParams a;
    Reader r(top.sub("attack"), "attack");
    r.get("types", a.types);
    r.get("c_att", a.c_att);
    r.get("hacked_fraction", a.hacked_fraction);
    r.get("ch_av_kw", a.ch_av_kw);
    r.done();
    if (a.types.empty()) bad_config("attack.types must list at least one type");
    std::set<int> uniq(a.types.begin(), a.types.end());
    if (uniq.size() != a.types.size()) bad_config("attack.types has duplicates");
    for (int t : a.types) {
      if (t < 1 || t > 6) bad_config("attack.types entries must be 1..6");
    }
    if (!(a.c_att > 0.0 && a.c_att <= 0.1)) bad_config("attack.c_att must lie in (0, 0.1]");
    if (!(a.hacked_fraction > 0.0 && a.hacked_fraction <= 1.0)) {
      bad_config("attack.hacked_fraction must lie in (0, 1]");
    }
    if (a.ch_av_kw && !(*a.ch_av_kw >= 0.0)) bad_config("attack.ch_av_kw must be >= 0");
    cfg.attack = a;
  }

  if (top.has("detector")) {
    DetectorParams d;
    d.n_evcp = cfg.fleet.n_evcp;
    Reader r(top.sub("detector"), "detector");
    r.get("n_evcp", d.n_evcp);
    r.get("train_normals", d.train_normals);
    r.get("validation_fraction", d.validation_fraction);
    r.get("heldout_normals", d.heldout_normals);
    r.get("test_normals", d.test_normals);
    r.get("test_attacks", d.test_attacks);
    r.get("epochs", d.epochs);
    r.get("batch_size", d.batch_size);
    r.get("lr", d.lr);
    r.get("quantile", d.quantile);
    r.get("baselines", d.baselines);
    r.get("iforest_trees", d.iforest_trees);
    r.get("iforest_subsample", d.iforest_subsample);
    if (r.has("benign")) d.benign = read_benign(r.sub("benign"));
    r.done();
    require_positive(d.n_evcp, "detector.n_evcp");
    require_positive(d.train_normals, "detector.train_normals");
    require_positive(d.batch_size, "detector.batch_size");
    require_positive(d.iforest_trees, "detector.iforest_trees");
    if (d.iforest_subsample < 2) bad_config("detector.iforest_subsample must be >= 2");
    if (d.epochs < 0 || d.heldout_normals < 0 || d.test_normals < 0 || d.test_attacks < 0) {
      bad_config("detector sample counts and epochs must be >= 0");
    }
    if (!(d.validation_fraction > 0.0 && d.validation_fraction < 1.0)) {
      bad_config("detector.validation_fraction must lie in (0, 1)");
    }
    if (!(d.quantile > 0.0 && d.quantile <= 1.0)) bad_config("detector.quantile must lie in (0, 1]");
    if (!(d.lr >= 0.0)) bad_config("detector.lr must be >= 0");
    cfg.detector = d;
  }
  top.done();
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json fleet = cfg.fleet.csv ? json{{"csv", *cfg.fleet.csv}}
                            : json{{"n_evcp", cfg.fleet.n_evcp}, {"distribution", distribution_json(cfg.fleet.dist)}};
  json prices = {{"model", price_model_json(cfg.prices.model)}};
  if (cfg.prices.da_csv) prices["da_csv"] = *cfg.prices.da_csv;
  if (cfg.prices.rt_csv) prices["rt_csv"] = *cfg.prices.rt_csv;
  json j = {
      {"seed", cfg.seed},
      {"grid", {{"horizon_hours", cfg.grid.horizon_hours()}, {"slot_minutes", cfg.grid.slot_minutes()}}},
      {"fleet", fleet},
      {"prices", prices},
      {"market",
       {{"max_rate_kw", cfg.market.max_rate_kw},
        {"history_days", cfg.market.history_days},
        {"mc_samples", cfg.market.mc_samples}}},
  };
  if (cfg.attack) {
    json a = {{"types", cfg.attack->types},
              {"c_att", cfg.attack->c_att},
              {"hacked_fraction", cfg.attack->hacked_fraction}};
    if (cfg.attack->ch_av_kw) a["ch_av_kw"] = *cfg.attack->ch_av_kw;
    j["attack"] = a;
  }
  if (cfg.detector) {
    const auto& d = *cfg.detector;
    j["detector"] = {{"n_evcp", d.n_evcp},
                     {"train_normals", d.train_normals},
                     {"validation_fraction", d.validation_fraction},
                     {"heldout_normals", d.heldout_normals},
                     {"test_normals", d.test_normals},
                     {"test_attacks", d.test_attacks},
                     {"epochs", d.epochs},
                     {"batch_size", d.batch_size},
                     {"lr", d.lr},
                     {"quantile", d.quantile},
                     {"baselines", d.baselines},
                     {"iforest_trees", d.iforest_trees},
                     {"iforest_subsample", d.iforest_subsample},
                     {"benign", benign_json(d.benign)}};
  }
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
  auto cfg = config_from_json(j);
  const auto base = std::filesystem::path(path).parent_path();
  const auto resolve = [&](std::optional<std::string>& p) {
    if (p && std::filesystem::path(*p).is_relative()) p = (base / *p).lexically_normal().string();
  };
  resolve(cfg.fleet.csv);
  resolve(cfg.prices.da_csv);
  resolve(cfg.prices.rt_csv);
  return cfg;
}

PriceSeries scenario_prices(const ExperimentConfig& cfg) {
  PriceSeries p;
  if (cfg.prices.da_csv) {
    p = read_price_csv_files(*cfg.prices.da_csv, *cfg.prices.rt_csv);
    p.eenc_da = cfg.prices.model.eenc_da;
    p.eenc_rt = cfg.prices.model.eenc_rt;
    p.pen_rt = cfg.prices.model.pen_rt;
  } else {
    p = generate_prices(cfg.prices.model, derive_seed(cfg.seed, "prices"));
  }
  p.validate();
  return p;
}

FleetSnapshot scenario_fleet(const ExperimentConfig& cfg) {
  if (cfg.fleet.csv) return read_sessions_csv_file(*cfg.fleet.csv, cfg.grid);
  return generate_fleet(cfg.fleet.n_evcp, cfg.fleet.dist, derive_seed(cfg.seed, "fleet"), cfg.grid);
}

std::vector<FleetSnapshot> scenario_history(const ExperimentConfig& cfg) {
  std::vector<FleetSnapshot> days;
  if (cfg.fleet.csv) {
    days.push_back(read_sessions_csv_file(*cfg.fleet.csv, cfg.grid));
    return days;
  }
  days.reserve(static_cast<std::size_t>(cfg.market.history_days));
  for (int d = 0; d < cfg.market.history_days; ++d) {
    days.push_back(generate_fleet(cfg.fleet.n_evcp, cfg.fleet.dist,
                                  derive_seed(cfg.seed, "history/day" + std::to_string(d)), cfg.grid));
  }
  return days;
}

AttackConfig scenario_attack(const ExperimentConfig& cfg, AttackType type, const FleetSnapshot& fleet) {
  const AttackParams a = cfg.attack.value_or(AttackParams{});
  const int n = static_cast<int>(fleet.size());
  const int hacked = static_cast<int>(std::lround(a.hacked_fraction * n));
  const double ch_av = a.ch_av_kw.value_or(mean_base_rate(fleet));
  return make_attack_config(type, a.c_att, ch_av, n, hacked,
                            derive_seed(cfg.seed, "attack/" + type_key(static_cast<int>(type))));
}

// ---- pipelines -------------------------------------------------------------

MarketScenario run_market(const ExperimentConfig& cfg) {
  MarketScenario out;
  const RateCap cap{cfg.market.max_rate_kw};
  const auto prices = staged("prices", [&] { return scenario_prices(cfg); });
  const auto fleet = staged("fleet", [&] { return scenario_fleet(cfg); });
  const auto history = staged("history", [&] { return scenario_history(cfg); });
  out.da = staged("market-da", [&] {
    return estimate_da_demand(history, cfg.market.mc_samples, derive_seed(cfg.seed, "market/mc"), prices, cap);
  });
  out.before = staged("market-rt", [&] { return settle_rt(out.da, fleet, prices, cap); });
  if (!cfg.attack) return out;
  for (int t : cfg.attack->types) {
    const auto type = static_cast<AttackType>(t);
    const auto acfg = staged("attack", [&] { return scenario_attack(cfg, type, fleet); });
    out.ch_av_kw = acfg.ch_av_kw;
    out.acr_att_kw = added_rate(acfg);
    const auto attacked = staged("attack", [&] { return inject(fleet, assign_targets(acfg, fleet.ids())); });
    out.after[t] = staged("market-rt", [&] { return settle_rt(out.da, attacked, prices, cap); });
    out.surcharge[t] = surcharge(out.before, out.after[t]);
  }
  return out;
}

DetectionData make_detection_data(const ExperimentConfig& cfg) {
  if (!cfg.detector) bad_config("detector section missing");
  const auto& P = *cfg.detector;
  const auto spec = sample_spec(cfg);
  const auto seed_of = [&](const std::string& name) { return derive_seed(cfg.seed, name); };

  std::vector<DeltaMatrix> pool;
  pool.reserve(static_cast<std::size_t>(P.train_normals));
  for (int i = 0; i < P.train_normals; ++i) {
    pool.push_back(normal_sample(spec, seed_of("detect/train/" + std::to_string(i)), cfg.grid));
  }
  const auto split = split_indices(pool.size(), P.validation_fraction, seed_of("detect/split"));
  if (split.train.empty() || split.validation.empty()) bad_config("detector split leaves a side empty");

  DetectionData data;
  for (auto i : split.train) data.train.push_back(pool[i]);
  for (auto i : split.validation) data.validation.push_back(pool[i]);
  for (int i = 0; i < P.heldout_normals; ++i) {
    data.heldout.push_back(normal_sample(spec, seed_of("detect/heldout/" + std::to_string(i)), cfg.grid));
  }
  for (int t : attack_types(cfg)) {
    const auto tk = type_key(t);
    for (int i = 0; i < P.test_normals; ++i) {
      auto d = normal_sample(spec, seed_of("detect/test/" + tk + "/normal/" + std::to_string(i)), cfg.grid);
      d.group = t;
      data.test.push_back(std::move(d));
    }
    for (int i = 0; i < P.test_attacks; ++i) {
      auto d = attack_sample(spec, static_cast<AttackType>(t),
                             seed_of("detect/test/" + tk + "/attack/" + std::to_string(i)), cfg.grid);
      d.group = t;
      data.test.push_back(std::move(d));
    }
  }
  return data;
}

Autoencoder initial_detector_model(const ExperimentConfig& cfg, Architecture arch) {
  const auto seed = derive_seed(cfg.seed, "detect/" + to_string(arch) + "/init");
  return arch == Architecture::kCnn ? make_cnn_autoencoder(seed) : make_mlp_autoencoder(seed);
}

TrainConfig detector_train_config(const ExperimentConfig& cfg, Architecture arch) {
  if (!cfg.detector) bad_config("detector section missing");
  TrainConfig tc;
  tc.epochs = cfg.detector->epochs;
  tc.batch_size = cfg.detector->batch_size;
  tc.lr = cfg.detector->lr;
  tc.seed = derive_seed(cfg.seed, "detect/" + to_string(arch) + "/train");
  return tc;
}

DetectionBenchmark run_detection(const ExperimentConfig& cfg) {
  const auto data = make_detection_data(cfg);
  const auto& P = *cfg.detector;
  const auto seed_of = [&](const std::string& name) { return derive_seed(cfg.seed, name); };

  DetectionBenchmark out;
  out.scaler = Scaler::fit(data.train);
  const auto norm = [&](const DeltaMatrix& d) { return normalize_reshape(d, out.scaler); };
  std::vector<NormalizedBatch> train, calib, heldout;
  for (const auto& d : data.train) train.push_back(norm(d));
  for (const auto& d : data.validation) calib.push_back(norm(d));
  for (const auto& d : data.heldout) heldout.push_back(norm(d));
  std::map<int, std::vector<NormalizedBatch>> test_normals, test_attacks;
  for (const auto& d : data.test) {
    auto& bucket = d.label == SampleLabel::kAttack ? test_attacks[d.group] : test_normals[d.group];
    bucket.push_back(norm(d));
  }
  for (const auto& [t, v] : test_normals) test_attacks[t];
  for (const auto& [t, v] : test_attacks) test_normals[t];

  auto cnn = initial_detector_model(cfg, Architecture::kCnn);
  out.cnn_history = train_autoencoder(cnn, train, calib, detector_train_config(cfg, Architecture::kCnn));
  const auto cnn_score = [&](const NormalizedBatch& b) { return sample_loss(cnn, b); };
  out.cnn = score_detector("cnn_ae", cnn_score, calib, P.quantile, heldout, test_normals, test_attacks);
  out.cnn_state.model = std::move(cnn);
  out.cnn_state.scaler = out.scaler;
  out.cnn_state.threshold = out.cnn.threshold;
  out.cnn_state.quantile = P.quantile;
  out.cnn_state.calibrated = true;

  if (P.baselines) {
    auto mlp = initial_detector_model(cfg, Architecture::kMlp);
    out.mlp_history = train_autoencoder(mlp, train, calib, detector_train_config(cfg, Architecture::kMlp));
    const auto mlp_score = [&](const NormalizedBatch& b) { return sample_loss(mlp, b); };
    out.mlp = score_detector("mlp_ae", mlp_score, calib, P.quantile, heldout, test_normals, test_attacks);

    std::vector<std::vector<double>> rows;
    for (const auto& b : train) {
      for (int k = 0; k < b.data.n; ++k) rows.push_back(block_vector(b, k));
    }
    IsolationForest forest;
    forest.fit(rows, {P.iforest_trees, P.iforest_subsample, seed_of("detect/iforest")});
    const auto forest_score = [&](const NormalizedBatch& b) {
      double s = 0.0;
      for (int k = 0; k < b.data.n; ++k) s += forest.score(block_vector(b, k));
      return s / b.data.n;
    };
    out.iforest = score_detector("isolation_forest", forest_score, calib, P.quantile, heldout,
                                 test_normals, test_attacks);
  }
  return out;
}

json StageTimings::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : seconds) j[k] = v;
  return j;
}

json to_json(const DetectorScores& s) {
  json per_type = json::object();
  json mean_attack = json::object();
  for (const auto& [t, m] : s.per_type) per_type[type_key(t)] = to_json(m);
  for (const auto& [t, v] : s.mean_attack_score) mean_attack[type_key(t)] = v;
  return {{"name", s.name},
          {"threshold", s.threshold},
          {"per_type", per_type},
          {"aggregate", to_json(s.aggregate)},
          {"heldout_flagged_fraction", s.heldout_flagged_fraction},
          {"mean_attack_score", mean_attack},
          {"mean_normal_score", s.mean_normal_score}};
}

json seed_manifest(const ExperimentConfig& cfg) {
  json s = {{"master", cfg.seed}};
  if (!cfg.prices.da_csv) s["prices"] = derive_seed(cfg.seed, "prices");
  if (!cfg.fleet.csv) {
    s["fleet"] = derive_seed(cfg.seed, "fleet");
    s["history_day0"] = derive_seed(cfg.seed, "history/day0");
  }
  s["market_mc"] = derive_seed(cfg.seed, "market/mc");
  if (cfg.attack) {
    for (int t : cfg.attack->types) s["attack_" + type_key(t)] = derive_seed(cfg.seed, "attack/" + type_key(t));
  }
  if (cfg.detector) {
    for (const char* name : {"detect/split", "detect/cnn/init", "detect/cnn/train", "detect/mlp/init",
                             "detect/mlp/train", "detect/iforest"}) {
      s[name] = derive_seed(cfg.seed, name);
    }
  }
  return s;
}

json run_experiment(const ExperimentConfig& cfg, StageTimings* timings) {
  using clock = std::chrono::steady_clock;
  const auto mark = [&](const std::string& stage, clock::time_point t0) {
    if (timings) timings->seconds[stage] = std::chrono::duration<double>(clock::now() - t0).count();
  };

  json report = {{"format", "evcma-run-report"}, {"version", 1}, {"config", to_json(cfg)},
                 {"seeds", seed_manifest(cfg)}};

  auto t0 = clock::now();
  const auto market = run_market(cfg);
  mark("market", t0);

  json m = {{"da",
             {{"bid_kw", market.da.bid_kw},
              {"ens_kwh", market.da.ens_kwh},
              {"demand_kwh", market.da.demand_kwh}}},
            {"before", ledger_summary(market.before)}};
  if (cfg.attack) {
    m["ch_av_kw"] = market.ch_av_kw;
    m["acr_att_kw"] = market.acr_att_kw;
    json after = json::object();
    json sur = json::object();
    for (const auto& [t, L] : market.after) after[type_key(t)] = ledger_summary(L);
    for (const auto& [t, r] : market.surcharge) sur[type_key(t)] = to_json(r);
    m["after"] = after;
    m["surcharge"] = sur;
  }
  report["market"] = m;

  if (cfg.detector) {
    t0 = clock::now();
    const auto det = staged("detect", [&] { return run_detection(cfg); });
    mark("detect", t0);
    json d = {{"scaler", det.scaler.scale},
              {"cnn_history",
               {{"initial_validation_loss", det.cnn_history.initial_validation_loss},
                {"train_loss", det.cnn_history.train_loss},
                {"validation_loss", det.cnn_history.validation_loss}}},
              {"cnn_ae", to_json(det.cnn)}};
    if (det.mlp) d["mlp_ae"] = to_json(*det.mlp);
    if (det.iforest) d["isolation_forest"] = to_json(*det.iforest);
    report["detection"] = d;
  }
  return report;
}

}  // namespace evcma
