#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "evcma/error.hpp"
#include "evcma/fleet.hpp"

using namespace evcma;

namespace {

ChargingRequest req(Slot st, Slot et, double d, std::string id = "EVCP1") {
  return ChargingRequest{std::move(id), st, et, d};
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no evcma::Error thrown";
  return ErrorKind::kIo;
}

}  // namespace

TEST(SlotGrid, DefaultIs288FiveMinuteSlots) {
  const SlotGrid g;
  EXPECT_EQ(g.n_step(), 288);
  EXPECT_EQ(g.slots_per_hour(), 12);
  EXPECT_EQ(g.wrap(289), 1);
  EXPECT_EQ(g.wrap(0), 288);
  EXPECT_EQ(g.wrap(-287), 1);
}

TEST(SlotGrid, RejectsSlotLengthThatDoesNotDivideAnHour) {
  EXPECT_EQ(kind_of([] { SlotGrid(24, 7); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([] { SlotGrid(0, 5); }), ErrorKind::kConfig);
}

TEST(TimeToSlot, HandExamples) {
  const SlotGrid g;
  EXPECT_EQ(time_to_slot("00:00", g), 1);
  EXPECT_EQ(time_to_slot("10:00", g), 121);
  EXPECT_EQ(time_to_slot("10:15", g), 124);
  EXPECT_EQ(time_to_slot("11:30", g), 139);
  EXPECT_EQ(time_to_slot("23:55", g), 288);
  EXPECT_EQ(time_to_slot("10:03", g), 121);
}

TEST(TimeToSlot, MalformedTextIsParseError) {
  const SlotGrid g;
  for (const char* bad : {"", "1000", "10:5", "ab:cd", "10:60", "24:00", "-1:00", "10:00x"}) {
    EXPECT_EQ(kind_of([&] { time_to_slot(bad, g); }), ErrorKind::kParse) << bad;
  }
}

TEST(TimeToSlot, RoundTripsEverySlot) {
  const SlotGrid g;
  for (Slot s = 1; s <= g.n_step(); ++s) EXPECT_EQ(time_to_slot(slot_to_time(s, g), g), s);
  EXPECT_EQ(slot_to_time(124, g), "10:15");
}

TEST(Availability, DayCase) {
  const SlotGrid g;
  const auto av = build_availability(req(10, 20, 1.0), g);
  EXPECT_EQ(av.total_available, 10);
  for (Slot s = 1; s <= 288; ++s) EXPECT_EQ(av.at(s), s >= 10 && s <= 19) << s;
}

TEST(Availability, WrapCase) {
  const SlotGrid g;
  const auto av = build_availability(req(280, 20, 1.0), g);
  EXPECT_EQ(av.total_available, 28);
  for (Slot s = 1; s <= 288; ++s) EXPECT_EQ(av.at(s), s >= 280 || s <= 19) << s;
}

TEST(Availability, InvalidRequests) {
  const SlotGrid g;
  EXPECT_EQ(kind_of([&] { build_availability(req(1, 289, 1.0), g); }), ErrorKind::kInvalidRequest);
  EXPECT_EQ(kind_of([&] { build_availability(req(5, 5, 1.0), g); }), ErrorKind::kInvalidRequest);
  EXPECT_EQ(kind_of([&] { build_availability(req(0, 5, 1.0), g); }), ErrorKind::kInvalidRequest);
  EXPECT_EQ(kind_of([&] { validate(req(1, 5, -1.0), g); }), ErrorKind::kInvalidRequest);
}

TEST(Availability, BranchTotalityProperty) {
  const SlotGrid g;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> slot(1, 288);
  for (int i = 0; i < 5000; ++i) {
    const Slot st = slot(rng);
    Slot et = slot(rng);
    if (et == st) continue;
    const auto av = build_availability(req(st, et, 1.0), g);
    const int expected = ((et - st) % 288 + 288) % 288;
    ASSERT_EQ(av.total_available, expected);
    int ones = 0;
    for (auto b : av.bits) ones += b;
    ASSERT_EQ(ones, expected);
  }
}

TEST(BaseRate, HandExamples) {
  const SlotGrid g;
  EXPECT_DOUBLE_EQ(base_rate(req(1, 13, 6.0), g).rate_kw, 6.0);
  const auto r0 = req(time_to_slot("10:00", g), time_to_slot("11:30", g), 20.0);
  const auto r = base_rate(r0, g);
  EXPECT_EQ(r.availability.total_available, 18);
  EXPECT_NEAR(r.rate_kw, 13.333333333333334, 1e-12);
  const AvailabilityVector full{std::vector<std::uint8_t>(288, 1), 288};
  EXPECT_NEAR(base_rate(req(1, 2, 0.0001), full, g).rate_kw, 0.0001 * 12 / 288, 1e-18);
  EXPECT_NEAR(base_rate(req(1, 2, 0.0001), full, g).rate_kw, 4.1667e-6, 1e-10);
}

TEST(BaseRate, ZeroAvailabilityIsDegenerate) {
  const SlotGrid g;
  AvailabilityVector empty{std::vector<std::uint8_t>(288, 0), 0};
  EXPECT_EQ(kind_of([&] { base_rate(req(1, 2, 1.0), empty, g); }), ErrorKind::kDegenerate);
}

TEST(BaseRate, EnergyConservationProperty) {
  const SlotGrid g;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> slot(1, 288);
  std::uniform_real_distribution<double> dem(0.01, 80.0);
  for (int i = 0; i < 5000; ++i) {
    const Slot st = slot(rng);
    const Slot et = slot(rng);
    if (st == et) continue;
    const double d = dem(rng);
    const auto r = base_rate(req(st, et, d), g);
    ASSERT_NEAR(r.rate_kw * r.availability.total_available * g.slot_hours(), d, kEnergyTolerance);
    ASSERT_GE(r.rate_kw, 0.0);
  }
}

TEST(AggregateProfile, EmptySingleAndOverlap) {
  const SlotGrid g;
  EXPECT_EQ(aggregate_profile(FleetSnapshot(g, {})), std::vector<double>(288, 0.0));
  const auto one = aggregate_profile(FleetSnapshot(g, {req(1, 13, 6.0, "A")}));
  for (int s = 0; s < 288; ++s) EXPECT_DOUBLE_EQ(one[s], s < 12 ? 6.0 : 0.0);
  const auto two = aggregate_profile(FleetSnapshot(g, {req(1, 13, 6.0, "A"), req(7, 19, 4.0, "B")}));
  EXPECT_DOUBLE_EQ(two[8], 10.0);
  EXPECT_DOUBLE_EQ(two[14], 4.0 * 12 / 12);
}

TEST(AggregateProfile, SuperpositionAndEnergy) {
  const SlotGrid g;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> slot(1, 288);
  std::uniform_real_distribution<double> dem(0.5, 40.0);
  std::vector<ChargingRequest> a, b;
  double total = 0.0;
  for (int i = 0; i < 60; ++i) {
    Slot st = slot(rng), et = slot(rng);
    if (st == et) et = g.wrap(st + 1);
    auto r = req(st, et, dem(rng), "E" + std::to_string(i));
    total += r.demand_kwh;
    (i % 2 ? a : b).push_back(r);
  }
  std::vector<ChargingRequest> all = a;
  all.insert(all.end(), b.begin(), b.end());
  const auto pa = aggregate_profile(FleetSnapshot(g, a));
  const auto pb = aggregate_profile(FleetSnapshot(g, b));
  const auto pall = aggregate_profile(FleetSnapshot(g, all));
  double energy = 0.0;
  for (int s = 0; s < 288; ++s) {
    EXPECT_NEAR(pall[s], pa[s] + pb[s], 1e-9);
    energy += pall[s] * g.slot_hours();
  }
  EXPECT_NEAR(energy, total, 1e-6);
}

TEST(FleetSnapshot, RejectsDuplicateIdsAndKeepsOrder) {
  const SlotGrid g;
  EXPECT_EQ(kind_of([&] { FleetSnapshot(g, {req(1, 5, 1, "A"), req(2, 6, 1, "A")}); }),
            ErrorKind::kInvalidRequest);
  const FleetSnapshot f(g, {req(1, 5, 1, "B"), req(2, 6, 2, "A")});
  EXPECT_EQ(f.ids(), (std::vector<std::string>{"B", "A"}));
  ASSERT_NE(f.find("A"), nullptr);
  EXPECT_DOUBLE_EQ(f.find("A")->demand_kwh, 2.0);
  EXPECT_EQ(f.find("C"), nullptr);
}

TEST(MeanBaseRate, AveragesRates) {
  const SlotGrid g;
  EXPECT_DOUBLE_EQ(mean_base_rate(FleetSnapshot(g, {})), 0.0);
  const FleetSnapshot f(g, {req(1, 13, 6.0, "A"), req(1, 13, 2.0, "B")});
  EXPECT_DOUBLE_EQ(mean_base_rate(f), 4.0);
}

TEST(SessionsCsv, RoundTrip) {
  const SlotGrid g;
  const FleetSnapshot f(g, {req(121, 139, 20.0, "EVCP0001"), req(280, 20, 7.25, "EVCP0002")});
  std::stringstream ss;
  write_sessions_csv(ss, f);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "evcp_id,start_time,end_time,kwh_requested");
  const auto back = read_sessions_csv(ss, g);
  EXPECT_EQ(back.requests(), f.requests());
}

TEST(SessionsCsv, Errors) {
  const SlotGrid g;
  std::stringstream bad_header("id,a,b,c\nX,10:00,11:00,1\n");
  EXPECT_EQ(kind_of([&] { read_sessions_csv(bad_header, g); }), ErrorKind::kParse);
  std::stringstream bad_time("evcp_id,start_time,end_time,kwh_requested\nX,1000,11:00,1\n");
  EXPECT_EQ(kind_of([&] { read_sessions_csv(bad_time, g); }), ErrorKind::kParse);
  std::stringstream equal("evcp_id,start_time,end_time,kwh_requested\nX,10:00,10:00,1\n");
  EXPECT_EQ(kind_of([&] { read_sessions_csv(equal, g); }), ErrorKind::kInvalidRequest);
  EXPECT_EQ(kind_of([&] { read_sessions_csv_file("/nonexistent/x.csv", g); }), ErrorKind::kIo);
}
