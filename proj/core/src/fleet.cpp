#include "evcma/fleet.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "csv.hpp"
#include "evcma/error.hpp"

namespace evcma {

SlotGrid::SlotGrid(int horizon_hours, int slot_minutes)
    : horizon_hours_(horizon_hours), slot_minutes_(slot_minutes), n_step_(0) {
  if (horizon_hours <= 0) {
    throw Error(ErrorKind::kConfig, "planning horizon must be positive");
  }
  if (slot_minutes <= 0 || 60 % slot_minutes != 0) {
    throw Error(ErrorKind::kConfig,
                "slot length must divide 60 minutes, got " + std::to_string(slot_minutes));
  }
  n_step_ = horizon_hours * (60 / slot_minutes);
}

Slot SlotGrid::wrap(long long s) const noexcept {
  const long long n = n_step_;
  long long r = (s - 1) % n;
  if (r < 0) r += n;
  return static_cast<Slot>(r + 1);
}

void validate(const ChargingRequest& req, const SlotGrid& grid) {
  const auto bad = [&](const std::string& why) {
    throw Error(ErrorKind::kInvalidRequest, "request '" + req.evcp_id + "': " + why);
  };
  if (req.evcp_id.empty()) bad("empty evcp id");
  if (!grid.contains(req.start_slot)) bad("start slot " + std::to_string(req.start_slot) +
                                          " outside [1, " + std::to_string(grid.n_step()) + "]");
  if (!grid.contains(req.end_slot)) bad("end slot " + std::to_string(req.end_slot) +
                                        " outside [1, " + std::to_string(grid.n_step()) + "]");
  if (req.start_slot == req.end_slot) bad("start slot equals end slot");
  if (!(req.demand_kwh > 0.0)) bad("demand must be positive");
}

FleetSnapshot::FleetSnapshot(SlotGrid grid, std::vector<ChargingRequest> requests,
                             Slot timestamp_slot)
    : grid_(grid), requests_(std::move(requests)), timestamp_slot_(timestamp_slot) {
  if (!grid_.contains(timestamp_slot_)) {
    throw Error(ErrorKind::kInvalidRequest, "snapshot timestamp outside the grid");
  }
  index_.reserve(requests_.size());
  for (std::size_t i = 0; i < requests_.size(); ++i) {
    validate(requests_[i], grid_);
    if (!index_.emplace(requests_[i].evcp_id, i).second) {
      throw Error(ErrorKind::kInvalidRequest, "duplicate evcp id '" + requests_[i].evcp_id + "'");
    }
  }
}

const ChargingRequest* FleetSnapshot::find(std::string_view evcp_id) const {
  const auto it = index_.find(std::string(evcp_id));
  return it == index_.end() ? nullptr : &requests_[it->second];
}

std::vector<std::string> FleetSnapshot::ids() const {
  std::vector<std::string> out;
  out.reserve(requests_.size());
  for (const auto& r : requests_) out.push_back(r.evcp_id);
  return out;
}

Slot time_to_slot(std::string_view wall_clock, const SlotGrid& grid) {
  const auto malformed = [&] {
    throw Error(ErrorKind::kParse, "malformed time '" + std::string(wall_clock) +
                                       "', expected HH:MM");
  };
  const auto colon = wall_clock.find(':');
  if (colon == std::string_view::npos || colon == 0 || colon > 2 ||
      wall_clock.size() - colon - 1 != 2) {
    malformed();
  }
  int hh = 0;
  int mm = 0;
  const auto hpart = wall_clock.substr(0, colon);
  const auto mpart = wall_clock.substr(colon + 1);
  auto r1 = std::from_chars(hpart.data(), hpart.data() + hpart.size(), hh);
  auto r2 = std::from_chars(mpart.data(), mpart.data() + mpart.size(), mm);
  if (r1.ec != std::errc() || r1.ptr != hpart.data() + hpart.size() || r2.ec != std::errc() ||
      r2.ptr != mpart.data() + mpart.size()) {
    malformed();
  }
  if (hh < 0 || hh > 23 || mm < 0 || mm > 59) malformed();
  const int minutes = hh * 60 + mm;
  const Slot s = minutes / grid.slot_minutes() + 1;
  if (!grid.contains(s)) {
    throw Error(ErrorKind::kInvalidRequest,
                "time " + std::string(wall_clock) + " is beyond the planning horizon");
  }
  return s;
}

std::string slot_to_time(Slot s, const SlotGrid& grid) {
  if (!grid.contains(s)) {
    throw Error(ErrorKind::kInvalidRequest, "slot " + std::to_string(s) + " outside the grid");
  }
  const int minutes = ((s - 1) * grid.slot_minutes()) % (24 * 60);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d:%02d", minutes / 60, minutes % 60);
  return buf;
}

AvailabilityVector build_availability(const ChargingRequest& req, const SlotGrid& grid) {
  validate(req, grid);
  AvailabilityVector av;
  av.bits.assign(static_cast<std::size_t>(grid.n_step()), 0);
  const auto fill = [&](Slot from, Slot to_inclusive) {
    for (Slot s = from; s <= to_inclusive; ++s) av.bits[static_cast<std::size_t>(s - 1)] = 1;
  };
  if (req.start_slot < req.end_slot) {
    fill(req.start_slot, req.end_slot - 1);
  } else {
    fill(1, req.end_slot - 1);
    fill(req.start_slot, grid.n_step());
  }
  int ta = 0;
  for (auto b : av.bits) ta += b;
  av.total_available = ta;
  return av;
}

RateProfile base_rate(const ChargingRequest& req, const AvailabilityVector& av,
                      const SlotGrid& grid) {
  if (av.total_available <= 0) {
    throw Error(ErrorKind::kDegenerate, "request '" + req.evcp_id + "' has no available slots");
  }
  RateProfile rp;
  rp.evcp_id = req.evcp_id;
  rp.rate_kw = req.demand_kwh * (60.0 / grid.slot_minutes()) / av.total_available;
  rp.availability = av;
  return rp;
}

RateProfile base_rate(const ChargingRequest& req, const SlotGrid& grid) {
  return base_rate(req, build_availability(req, grid), grid);
}

std::vector<double> aggregate_profile(const FleetSnapshot& fleet) {
  const auto& grid = fleet.grid();
  std::vector<double> load(static_cast<std::size_t>(grid.n_step()), 0.0);
  for (const auto& req : fleet.requests()) {
    const auto rp = base_rate(req, grid);
    for (std::size_t i = 0; i < load.size(); ++i) {
      if (rp.availability.bits[i]) load[i] += rp.rate_kw;
    }
  }
  return load;
}

double mean_base_rate(const FleetSnapshot& fleet) {
  if (fleet.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& req : fleet.requests()) sum += base_rate(req, fleet.grid()).rate_kw;
  return sum / static_cast<double>(fleet.size());
}

FleetSnapshot read_sessions_csv(std::istream& in, const SlotGrid& grid) {
  static const std::vector<std::string> kHeader = {"evcp_id", "start_time", "end_time",
                                                   "kwh_requested"};
  const auto table = csv::read(in, kHeader, "sessions csv");
  std::vector<ChargingRequest> requests;
  requests.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    ChargingRequest req;
    req.evcp_id = row[0];
    req.start_slot = time_to_slot(row[1], grid);
    req.end_slot = time_to_slot(row[2], grid);
    req.demand_kwh = csv::parse_double(row[3], "sessions csv", table.line_numbers[i]);
    requests.push_back(std::move(req));
  }
  return FleetSnapshot(grid, std::move(requests));
}

FleetSnapshot read_sessions_csv_file(const std::string& path, const SlotGrid& grid) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return read_sessions_csv(in, grid);
}

void write_sessions_csv(std::ostream& out, const FleetSnapshot& fleet) {
  out << "evcp_id,start_time,end_time,kwh_requested\n";
  for (const auto& r : fleet.requests()) {
    out << r.evcp_id << ',' << slot_to_time(r.start_slot, fleet.grid()) << ','
        << slot_to_time(r.end_slot, fleet.grid()) << ',' << csv::format_double(r.demand_kwh)
        << '\n';
  }
}

void write_sessions_csv_file(const std::string& path, const FleetSnapshot& fleet) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  write_sessions_csv(out, fleet);
}

}  // namespace evcma
