#pragma once

// Slotted-time model of a charging fleet: requests, availability vectors,
// coordinated base rates and aggregate load profiles.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evcma {

/// 1-based slot index on a SlotGrid, valid range [1, n_step].
using Slot = int;

/// Absolute tolerance for rate/energy comparisons (kW, kWh).
inline constexpr double kEnergyTolerance = 1e-9;

/// Planning horizon divided into equal slots. n_step = horizon * 60 / slot_minutes.
class SlotGrid {
 public:
  /// Throws Error(kConfig) unless horizon > 0, 0 < slot_minutes and 60 % slot_minutes == 0.
  explicit SlotGrid(int horizon_hours = 24, int slot_minutes = 5);

  int horizon_hours() const noexcept { return horizon_hours_; }
  int slot_minutes() const noexcept { return slot_minutes_; }
  int n_step() const noexcept { return n_step_; }
  int slots_per_hour() const noexcept { return 60 / slot_minutes_; }
  /// Slot length in hours (Δt/60).
  double slot_hours() const noexcept { return slot_minutes_ / 60.0; }
  bool contains(Slot s) const noexcept { return s >= 1 && s <= n_step_; }

  /// Wraps any integer onto [1, n_step].
  Slot wrap(long long s) const noexcept;

  friend bool operator==(const SlotGrid&, const SlotGrid&) = default;

 private:
  int horizon_hours_;
  int slot_minutes_;
  int n_step_;
};

/// Submitted preferences of one charging point: start slot, end slot (exclusive), demand.
struct ChargingRequest {
  std::string evcp_id;
  Slot start_slot = 1;
  Slot end_slot = 2;
  double demand_kwh = 0.0;

  friend bool operator==(const ChargingRequest&, const ChargingRequest&) = default;
};

/// Throws Error(kInvalidRequest) if the request is out of bounds for `grid`.
void validate(const ChargingRequest& req, const SlotGrid& grid);

/// Per-slot occupancy. bits[s - 1] == 1 iff slot s is available.
struct AvailabilityVector {
  std::vector<std::uint8_t> bits;
  int total_available = 0;

  bool at(Slot s) const { return bits.at(static_cast<std::size_t>(s - 1)) != 0; }
  friend bool operator==(const AvailabilityVector&, const AvailabilityVector&) = default;
};

struct RateProfile {
  std::string evcp_id;
  double rate_kw = 0.0;
  AvailabilityVector availability;
};

/// Requests of a fleet observed at one slot. Ids are unique and keep insertion order.
class FleetSnapshot {
 public:
  FleetSnapshot() = default;
  /// Validates every request against `grid` and rejects duplicate ids.
  FleetSnapshot(SlotGrid grid, std::vector<ChargingRequest> requests, Slot timestamp_slot = 1);

  const SlotGrid& grid() const noexcept { return grid_; }
  const std::vector<ChargingRequest>& requests() const noexcept { return requests_; }
  Slot timestamp_slot() const noexcept { return timestamp_slot_; }
  std::size_t size() const noexcept { return requests_.size(); }
  bool empty() const noexcept { return requests_.empty(); }

  const ChargingRequest* find(std::string_view evcp_id) const;
  std::vector<std::string> ids() const;

  friend bool operator==(const FleetSnapshot& a, const FleetSnapshot& b) {
    return a.grid_ == b.grid_ && a.timestamp_slot_ == b.timestamp_slot_ &&
           a.requests_ == b.requests_;
  }

 private:
  SlotGrid grid_;
  std::vector<ChargingRequest> requests_;
  std::unordered_map<std::string, std::size_t> index_;
  Slot timestamp_slot_ = 1;
};

/// "HH:MM" -> slot = floor(minutes / Δt) + 1. Throws Error(kParse) on malformed text,
/// Error(kInvalidRequest) if the slot is beyond the horizon.
Slot time_to_slot(std::string_view wall_clock, const SlotGrid& grid);

/// Left edge of slot `s` as "HH:MM".
std::string slot_to_time(Slot s, const SlotGrid& grid);

/// Half-open occupancy: {st, ..., et-1} when st < et, otherwise
/// {st, ..., n_step} ∪ {1, ..., et-1}.
AvailabilityVector build_availability(const ChargingRequest& req, const SlotGrid& grid);

/// Ch = d * (60/Δt) / Ta. Throws Error(kDegenerate) if Ta == 0.
RateProfile base_rate(const ChargingRequest& req, const AvailabilityVector& av,
                      const SlotGrid& grid);

/// Convenience: build_availability followed by base_rate.
RateProfile base_rate(const ChargingRequest& req, const SlotGrid& grid);

/// load[s - 1] = Σ_n Ch_n * Av_n[s] in kW.
std::vector<double> aggregate_profile(const FleetSnapshot& fleet);

/// Mean base rate over the fleet (kW); 0 for an empty fleet.
double mean_base_rate(const FleetSnapshot& fleet);

// Sessions CSV: evcp_id,start_time,end_time,kwh_requested with HH:MM times.
FleetSnapshot read_sessions_csv(std::istream& in, const SlotGrid& grid);
FleetSnapshot read_sessions_csv_file(const std::string& path, const SlotGrid& grid);
void write_sessions_csv(std::ostream& out, const FleetSnapshot& fleet);
void write_sessions_csv_file(const std::string& path, const FleetSnapshot& fleet);

}  // namespace evcma
