#pragma once

// Charge-manipulation attacks: rewrite (start, end, demand) observed at slot t
// into manipulated values injected at t + Δt.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "evcma/fleet.hpp"

namespace evcma {

enum class AttackType : int { kType1 = 1, kType2, kType3, kType4, kType5, kType6 };

/// What an attack does to one EVCP. Types 4-6 are mixtures of the three rewrites.
enum class Manipulation : int {
  kUntouched = 0,
  kDemand = 1,      // Type-1 rewrite: demand only
  kStartShift = 2,  // Type-2 rewrite: demand + later start
  kEndShift = 3,    // Type-3 rewrite: demand + earlier end
};

std::string to_string(Manipulation m);
Manipulation manipulation_from_string(const std::string& s);

struct SubsetCounts {
  int demand = 0;  // |N_hd|
  int start = 0;   // |N_hs|
  int end = 0;     // |N_he|
  int total() const { return demand + start + end; }
  friend bool operator==(const SubsetCounts&, const SubsetCounts&) = default;
};

struct AttackConfig {
  double c_att = 0.08;     // attack-rate coefficient, (0, 0.1]
  double ch_av_kw = 30.0;  // attacker's estimate of the fleet average rate
  int n_total = 0;         // |N|
  int n_hacked = 0;        // |N_h|
  SubsetCounts counts;
  AttackType type = AttackType::kType1;
  std::uint64_t seed = 0;

  /// Throws Error(kConfig) when the coefficient or the subset sizes violate
  /// the per-type constraints.
  void validate() const;
};

/// Equal split of n_hacked across the subsets that `type` uses.
SubsetCounts default_counts(AttackType type, int n_hacked);

/// AttackConfig with counts filled by default_counts.
AttackConfig make_attack_config(AttackType type, double c_att, double ch_av_kw, int n_total,
                                int n_hacked, std::uint64_t seed);

struct AttackPlan {
  double acr_att_kw = 0.0;
  std::map<std::string, Manipulation> assignment;  // every fleet id

  Manipulation of(const std::string& evcp_id) const;
  SubsetCounts counts() const;
};

struct ManipulatedRequest {
  ChargingRequest request;       // (s̄t, ēt, d̄)
  double rate_kw = 0.0;          // C̄h = d̄ * (60/Δt) / Ta
  int total_available = 0;       // T̄a (integral)
  AvailabilityVector availability;
  Manipulation provenance = Manipulation::kUntouched;
  bool clamped = false;          // T̄a rounding hit the lower clamp of one slot
};

/// ACR_att = c_att * ch_av.
double added_rate(const AttackConfig& cfg);

ManipulatedRequest apply_type1(const ChargingRequest& req, const AvailabilityVector& av,
                               const RateProfile& rate, double acr_att_kw,
                               const SlotGrid& grid);
ManipulatedRequest apply_type2(const ChargingRequest& req, const AvailabilityVector& av,
                               const RateProfile& rate, double acr_att_kw,
                               const SlotGrid& grid);
ManipulatedRequest apply_type3(const ChargingRequest& req, const AvailabilityVector& av,
                               const RateProfile& rate, double acr_att_kw,
                               const SlotGrid& grid);

/// Dispatches on `m`; kUntouched returns the request unchanged.
ManipulatedRequest apply_manipulation(Manipulation m, const ChargingRequest& req,
                                      double acr_att_kw, const SlotGrid& grid);

/// Seeded uniform sampling without replacement: a shuffled prefix of `fleet_ids`
/// becomes the demand subset, the next block the start subset, then the end subset.
AttackPlan assign_targets(const AttackConfig& cfg, const std::vector<std::string>& fleet_ids);

struct InjectionResult {
  FleetSnapshot fleet;                          // snapshot at t + Δt
  std::vector<ManipulatedRequest> manipulated;  // one per hacked EVCP, fleet order
};

/// Rewrites every planned id; untouched requests are copied verbatim.
InjectionResult inject_detailed(const FleetSnapshot& fleet, const AttackPlan& plan);
FleetSnapshot inject(const FleetSnapshot& fleet, const AttackPlan& plan);

// Attack-plan CSV: evcp_id,type with type in {untouched,type1,type2,type3}.
void write_plan_csv(std::ostream& out, const AttackPlan& plan);
AttackPlan read_plan_csv(std::istream& in, double acr_att_kw);

}  // namespace evcma
