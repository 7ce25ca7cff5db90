#include "evcma/attack.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "csv.hpp"
#include "evcma/error.hpp"

namespace evcma {
namespace {

// Lines 19/24/33: d̄ = ACR·Ta·(Δt/60) − Ch·(Δt/60) + d, grouped so that
// ACR == Ch/Ta yields d̄ == d bit for bit.
double manipulated_demand(double demand, double ch, int ta, double acr, const SlotGrid& grid) {
  const double h = grid.slot_minutes() / 60.0;
  return demand + (acr - ch / ta) * ta * h;
}

double manipulated_rate(double dbar, int ta, const SlotGrid& grid) {
  return dbar * (60.0 / grid.slot_minutes()) / ta;
}

struct ShrunkWindow {
  int ta_bar = 0;
  bool clamped = false;
};

// Lines 26/35: T̄a = d·(60/Δt)/C̄h, rounded half-up and clamped to [1, Ta].
ShrunkWindow shrunk_window(double demand, double ch_bar, int ta, const SlotGrid& grid) {
  if (!(ch_bar > 0.0)) return {ta, false};
  const double raw = demand * (60.0 / grid.slot_minutes()) / ch_bar;
  const double rounded = std::floor(raw + 0.5);
  if (rounded < 1.0) return {1, true};
  if (rounded > static_cast<double>(ta)) return {ta, false};
  return {static_cast<int>(rounded), false};
}

ManipulatedRequest shifted(const ChargingRequest& req, const AvailabilityVector& av,
                           const RateProfile& rate, double acr, const SlotGrid& grid,
                           Manipulation kind) {
  const int ta = av.total_available;
  if (ta <= 0) throw Error(ErrorKind::kDegenerate, "request '" + req.evcp_id + "' has Ta = 0");
  ManipulatedRequest out;
  out.provenance = kind;
  out.request = req;
  out.request.demand_kwh = manipulated_demand(req.demand_kwh, rate.rate_kw, ta, acr, grid);
  out.rate_kw = manipulated_rate(out.request.demand_kwh, ta, grid);
  const auto window = shrunk_window(req.demand_kwh, out.rate_kw, ta, grid);
  out.clamped = window.clamped;
  const int shift = std::abs(ta - window.ta_bar);
  if (kind == Manipulation::kStartShift) {
    out.request.start_slot = grid.wrap(static_cast<long long>(req.start_slot) + shift);
  } else {
    out.request.end_slot = grid.wrap(static_cast<long long>(req.end_slot) - shift);
  }
  out.availability = build_availability(out.request, grid);
  out.total_available = out.availability.total_available;
  return out;
}

}  // namespace

std::string to_string(Manipulation m) {
  switch (m) {
    case Manipulation::kUntouched: return "untouched";
    case Manipulation::kDemand: return "type1";
    case Manipulation::kStartShift: return "type2";
    case Manipulation::kEndShift: return "type3";
  }
  return "untouched";
}

Manipulation manipulation_from_string(const std::string& s) {
  if (s == "untouched") return Manipulation::kUntouched;
  if (s == "type1") return Manipulation::kDemand;
  if (s == "type2") return Manipulation::kStartShift;
  if (s == "type3") return Manipulation::kEndShift;
  throw Error(ErrorKind::kParse, "unknown manipulation '" + s + "'");
}

void AttackConfig::validate() const {
  const auto fail = [](const std::string& why) { throw Error(ErrorKind::kConfig, why); };
  if (!(c_att > 0.0 && c_att <= 0.1)) fail("c_att must lie in (0, 0.1]");
  if (!(ch_av_kw >= 0.0) || !std::isfinite(ch_av_kw)) fail("ch_av must be a finite rate >= 0");
  if (n_total < 0 || n_hacked < 0) fail("fleet sizes must be non-negative");
  if (n_hacked > n_total) fail("more hacked EVCPs than the fleet holds");
  if (counts.demand < 0 || counts.start < 0 || counts.end < 0) fail("negative subset size");
  if (counts.total() != n_hacked) fail("subset sizes must sum to n_hacked");
  const int h = n_hacked;
  // count >= 0.4 h  <=>  10 count >= 4 h, kept in integers.
  const auto at_least = [h](int c) { return 10 * c >= 4 * h; };
  const auto at_most = [h](int c) { return 10 * c <= 4 * h; };
  switch (type) {
    case AttackType::kType1:
      if (counts != SubsetCounts{h, 0, 0}) fail("Type-1 hacks every EVCP in the demand subset");
      break;
    case AttackType::kType2:
      if (counts != SubsetCounts{0, h, 0}) fail("Type-2 hacks every EVCP in the start subset");
      break;
    case AttackType::kType3:
      if (counts != SubsetCounts{0, 0, h}) fail("Type-3 hacks every EVCP in the end subset");
      break;
    case AttackType::kType4:
      if (counts.end != 0 || !at_least(counts.demand) || !at_least(counts.start)) {
        fail("Type-4 needs demand and start subsets of at least 0.4 |N_h| and no end subset");
      }
      break;
    case AttackType::kType5:
      if (counts.start != 0 || !at_least(counts.demand) || !at_least(counts.end)) {
        fail("Type-5 needs demand and end subsets of at least 0.4 |N_h| and no start subset");
      }
      break;
    case AttackType::kType6:
      if (!at_most(counts.demand) || !at_most(counts.start) || !at_most(counts.end)) {
        fail("Type-6 needs every subset at most 0.4 |N_h|");
      }
      break;
    default:
      fail("attack type must be 1..6");
  }
}

SubsetCounts default_counts(AttackType type, int n_hacked) {
  const int h = n_hacked;
  switch (type) {
    case AttackType::kType1: return {h, 0, 0};
    case AttackType::kType2: return {0, h, 0};
    case AttackType::kType3: return {0, 0, h};
    case AttackType::kType4: return {h - h / 2, h / 2, 0};
    case AttackType::kType5: return {h - h / 2, 0, h / 2};
    case AttackType::kType6: {
      const int third = h / 3;
      const int rem = h - 3 * third;
      return {third + (rem > 0 ? 1 : 0), third + (rem > 1 ? 1 : 0), third};
    }
  }
  throw Error(ErrorKind::kConfig, "attack type must be 1..6");
}

AttackConfig make_attack_config(AttackType type, double c_att, double ch_av_kw, int n_total,
                                int n_hacked, std::uint64_t seed) {
  AttackConfig cfg;
  cfg.type = type;
  cfg.c_att = c_att;
  cfg.ch_av_kw = ch_av_kw;
  cfg.n_total = n_total;
  cfg.n_hacked = n_hacked;
  cfg.counts = default_counts(type, n_hacked);
  cfg.seed = seed;
  return cfg;
}

Manipulation AttackPlan::of(const std::string& evcp_id) const {
  const auto it = assignment.find(evcp_id);
  return it == assignment.end() ? Manipulation::kUntouched : it->second;
}

SubsetCounts AttackPlan::counts() const {
  SubsetCounts c;
  for (const auto& [id, m] : assignment) {
    if (m == Manipulation::kDemand) ++c.demand;
    if (m == Manipulation::kStartShift) ++c.start;
    if (m == Manipulation::kEndShift) ++c.end;
  }
  return c;
}

double added_rate(const AttackConfig& cfg) { return cfg.c_att * cfg.ch_av_kw; }

ManipulatedRequest apply_type1(const ChargingRequest& req, const AvailabilityVector& av,
                               const RateProfile& rate, double acr_att_kw,
                               const SlotGrid& grid) {
  const int ta = av.total_available;
  if (ta <= 0) throw Error(ErrorKind::kDegenerate, "request '" + req.evcp_id + "' has Ta = 0");
  ManipulatedRequest out;
  out.provenance = Manipulation::kDemand;
  out.request = req;
  out.request.demand_kwh = manipulated_demand(req.demand_kwh, rate.rate_kw, ta, acr_att_kw, grid);
  out.rate_kw = manipulated_rate(out.request.demand_kwh, ta, grid);
  out.availability = av;
  out.total_available = ta;
  return out;
}

ManipulatedRequest apply_type2(const ChargingRequest& req, const AvailabilityVector& av,
                               const RateProfile& rate, double acr_att_kw,
                               const SlotGrid& grid) {
  return shifted(req, av, rate, acr_att_kw, grid, Manipulation::kStartShift);
}

ManipulatedRequest apply_type3(const ChargingRequest& req, const AvailabilityVector& av,
                               const RateProfile& rate, double acr_att_kw,
                               const SlotGrid& grid) {
  return shifted(req, av, rate, acr_att_kw, grid, Manipulation::kEndShift);
}

ManipulatedRequest apply_manipulation(Manipulation m, const ChargingRequest& req,
                                      double acr_att_kw, const SlotGrid& grid) {
  const auto av = build_availability(req, grid);
  const auto rate = base_rate(req, av, grid);
  switch (m) {
    case Manipulation::kDemand: return apply_type1(req, av, rate, acr_att_kw, grid);
    case Manipulation::kStartShift: return apply_type2(req, av, rate, acr_att_kw, grid);
    case Manipulation::kEndShift: return apply_type3(req, av, rate, acr_att_kw, grid);
    case Manipulation::kUntouched: break;
  }
  ManipulatedRequest out;
  out.request = req;
  out.rate_kw = rate.rate_kw;
  out.availability = av;
  out.total_available = av.total_available;
  return out;
}

AttackPlan assign_targets(const AttackConfig& cfg, const std::vector<std::string>& fleet_ids) {
  cfg.validate();
  if (cfg.n_total != static_cast<int>(fleet_ids.size())) {
    throw Error(ErrorKind::kConfig, "attack config expects " + std::to_string(cfg.n_total) +
                                        " EVCPs, fleet has " + std::to_string(fleet_ids.size()));
  }
  std::vector<std::string> pool = fleet_ids;
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(pool.begin(), pool.end(), rng);

  AttackPlan plan;
  plan.acr_att_kw = added_rate(cfg);
  std::size_t k = 0;
  const auto take = [&](int count, Manipulation m) {
    for (int i = 0; i < count; ++i) plan.assignment[pool[k++]] = m;
  };
  take(cfg.counts.demand, Manipulation::kDemand);
  take(cfg.counts.start, Manipulation::kStartShift);
  take(cfg.counts.end, Manipulation::kEndShift);
  while (k < pool.size()) plan.assignment[pool[k++]] = Manipulation::kUntouched;
  return plan;
}

InjectionResult inject_detailed(const FleetSnapshot& fleet, const AttackPlan& plan) {
  const auto& grid = fleet.grid();
  std::vector<ChargingRequest> out;
  out.reserve(fleet.size());
  std::vector<ManipulatedRequest> manipulated;
  for (const auto& req : fleet.requests()) {
    const auto m = plan.of(req.evcp_id);
    if (m == Manipulation::kUntouched) {
      out.push_back(req);
      continue;
    }
    auto mr = apply_manipulation(m, req, plan.acr_att_kw, grid);
    out.push_back(mr.request);
    manipulated.push_back(std::move(mr));
  }
  const Slot next = grid.wrap(static_cast<long long>(fleet.timestamp_slot()) + 1);
  return {FleetSnapshot(grid, std::move(out), next), std::move(manipulated)};
}

FleetSnapshot inject(const FleetSnapshot& fleet, const AttackPlan& plan) {
  return inject_detailed(fleet, plan).fleet;
}

void write_plan_csv(std::ostream& out, const AttackPlan& plan) {
  out << "evcp_id,type\n";
  for (const auto& [id, m] : plan.assignment) out << id << ',' << to_string(m) << '\n';
}

AttackPlan read_plan_csv(std::istream& in, double acr_att_kw) {
  const auto table = csv::read(in, {"evcp_id", "type"}, "attack plan csv");
  AttackPlan plan;
  plan.acr_att_kw = acr_att_kw;
  for (const auto& row : table.rows) {
    if (!plan.assignment.emplace(row[0], manipulation_from_string(row[1])).second) {
      throw Error(ErrorKind::kParse, "attack plan csv: duplicate id '" + row[0] + "'");
    }
  }
  return plan;
}

}  // namespace evcma
