#pragma once

// Two-settlement cost model. Day-ahead bids come from a Monte-Carlo estimate over
// historical fleets; the realized (possibly attacked) fleet is settled in real time
// against those fixed bids.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evcma/fleet.hpp"

namespace evcma {

inline constexpr int kMarketHours = 24;
inline constexpr int kIntervalsPerHour = 12;
inline constexpr int kMarketIntervals = kMarketHours * kIntervalsPerHour;
inline constexpr double kHourLength = 1.0;              // Δtm
inline constexpr double kIntervalLength = 1.0 / 12.0;   // Δ̂tm

/// Interval index (0-based) of hour tm ∈ [1,24], interval t̂m ∈ [1,12].
constexpr int interval_index(int hour, int interval) {
  return (hour - 1) * kIntervalsPerHour + (interval - 1);
}

struct PriceSeries {
  std::vector<double> da;  // 24 hourly prices, $/kWh
  std::vector<double> rt;  // 288 five-minute prices, $/kWh
  double eenc_da = 0.5;    // $/kWh
  double eenc_rt = 0.5;    // $/kWh
  double pen_rt = 0.06;    // $/kWh

  /// Throws Error(kDimension) on wrong lengths, Error(kConfig) on negative prices.
  void validate() const;
  /// DA prices expanded to the 288 five-minute intervals.
  std::vector<double> da_per_interval() const;
};

struct RateCap {
  double max_rate_kw = 30.0;
  void validate() const;
};

struct EvcpSchedule {
  std::string evcp_id;
  std::vector<double> rate_kw;  // per slot
  double demand_kwh = 0.0;
  double delivered_kwh = 0.0;
  double ens_kwh = 0.0;
};

struct FleetSchedule {
  std::vector<EvcpSchedule> evcps;
  std::vector<double> total_kw;  // per slot
  double demand_kwh = 0.0;
  double delivered_kwh = 0.0;
  double ens_kwh = 0.0;

  /// Hour-average of total_kw (requires a 24 h / 5 min grid).
  std::vector<double> hourly_mean_kw() const;
};

/// Price-sorted water-filling: each EVCP's demand goes into its available slots in
/// ascending price order (ties -> earlier slot) at up to the rate cap.
/// ENS = max(0, d - cap * Ta * Δt/60).
FleetSchedule schedule_charging(const FleetSnapshot& fleet, std::span<const double> slot_prices,
                                const RateCap& cap);

/// Day-ahead commitment: hourly bid PCH^DA and the expected energy not supplied.
struct DaCommitment {
  std::vector<double> bid_kw;  // 24 values
  double ens_kwh = 0.0;
  double demand_kwh = 0.0;
};

/// Draws `k_samples` historical days uniformly with replacement, schedules each
/// against the DA prices and averages the hourly load.
DaCommitment estimate_da_demand(std::span<const FleetSnapshot> history, int k_samples,
                                std::uint64_t seed, const PriceSeries& prices,
                                const RateCap& cap);

struct DaCosts {
  double charging = 0.0;  // Cost^CH,DA
  double eenc = 0.0;      // Cost^EENC,DA
  double total = 0.0;     // Cost^DA
};

DaCosts settle_da(std::span<const double> bid_kw, const PriceSeries& prices, double ens_da_kwh);

struct MarketLedger {
  std::vector<double> da_bid_kw;     // PCH^DA_tm (24)
  std::vector<double> rt_load_kw;    // PCH^RT_{tm,t̂m} (288)
  std::vector<double> inc_kw;        // P^INC,RT (288)
  std::vector<double> pen_kw;        // P^PEN,RT (288)
  FleetSchedule rt_schedule;         // pch^RT per EVCP
  double demand_da_kwh = 0.0;
  double ens_da_kwh = 0.0;
  double demand_rt_kwh = 0.0;
  double ens_rt_kwh = 0.0;

  double cost_ch_da = 0.0;
  double cost_eenc_da = 0.0;
  double cost_da = 0.0;
  double cost_inc_rt = 0.0;
  double cost_pen_rt = 0.0;
  double cost_eenc_rt = 0.0;
  double cost_rt = 0.0;
  double cost_total = 0.0;
};

struct BalanceSplit {
  double pen_kw = 0.0;
  double inc_kw = 0.0;
};

/// Complementary split of the RT/DA mismatch. The differences are exact, so
/// da - pen + inc == rt holds bit for bit, whenever da and rt lie on a common
/// grid as produced by snap_to_common_grid.
BalanceSplit split_balance(double da_kw, double rt_kw);

/// Rounds both vectors onto multiples of q = ulp(max |v|) and returns q (0 for
/// all-zero input). Values moved by at most q/2.
double snap_to_common_grid(std::vector<double>& a, std::vector<double>& b);

/// Real-time settlement of `rt_fleet` against fixed DA bids.
MarketLedger settle_rt(const DaCommitment& da, const FleetSnapshot& rt_fleet,
                       const PriceSeries& prices, const RateCap& cap);

/// Same settlement on a precomputed RT schedule.
MarketLedger settle_rt(const DaCommitment& da, FleetSchedule rt_schedule,
                       const PriceSeries& prices);

double total_cost(const MarketLedger& ledger);

struct SurchargeReport {
  double before = 0.0;
  double after = 0.0;
  double surcharge = 0.0;
  double percent = 0.0;  // relative to before
};

SurchargeReport surcharge(const MarketLedger& before, const MarketLedger& after);

nlohmann::json to_json(const MarketLedger& ledger);
nlohmann::json to_json(const SurchargeReport& report);

// Price CSVs: "hour,da_price" (24 rows) and "hour,interval,rt_price" (288 rows).
PriceSeries read_price_csv(std::istream& da_csv, std::istream& rt_csv);
PriceSeries read_price_csv_files(const std::string& da_path, const std::string& rt_path);
void write_da_price_csv(std::ostream& out, const PriceSeries& prices);
void write_rt_price_csv(std::ostream& out, const PriceSeries& prices);

}  // namespace evcma
