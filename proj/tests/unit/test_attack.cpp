#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "rewrite_oracle.hpp"
#include "evcma/attack.hpp"
#include "evcma/error.hpp"

using namespace evcma;

namespace {

const SlotGrid kGrid;

ChargingRequest req(Slot st, Slot et, double d, std::string id = "EVCP1") {
  return ChargingRequest{std::move(id), st, et, d};
}

FleetSnapshot random_fleet(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> slot(1, 288);
  std::uniform_real_distribution<double> dem(1.0, 40.0);
  std::vector<ChargingRequest> v;
  for (int i = 0; i < n; ++i) {
    Slot st = slot(rng), et = slot(rng);
    if (st == et) et = kGrid.wrap(st + 7);
    v.push_back(req(st, et, dem(rng), "EVCP" + std::to_string(1000 + i)));
  }
  return FleetSnapshot(kGrid, v);
}

}  // namespace

TEST(AddedRate, Products) {
  EXPECT_NEAR(added_rate(make_attack_config(AttackType::kType1, 0.08, 30.0, 10, 7, 1)), 2.4, 1e-12);
  EXPECT_NEAR(added_rate(make_attack_config(AttackType::kType1, 0.1, 7.4, 10, 7, 1)), 0.74, 1e-12);
}

TEST(AttackConfig, CoefficientBounds) {
  auto cfg = make_attack_config(AttackType::kType1, 0.08, 30.0, 10, 7, 1);
  cfg.c_att = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.c_att = 0.11;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(AttackConfig, MixtureCountConstraints) {
  auto t6 = make_attack_config(AttackType::kType6, 0.08, 30.0, 20, 10, 1);
  t6.counts = {4, 3, 3};
  EXPECT_NO_THROW(t6.validate());
  t6.counts = {5, 3, 2};
  EXPECT_THROW(t6.validate(), Error);

  auto t4 = make_attack_config(AttackType::kType4, 0.08, 30.0, 20, 10, 1);
  t4.counts = {3, 7, 0};
  EXPECT_THROW(t4.validate(), Error);
  t4.counts = {4, 6, 0};
  EXPECT_NO_THROW(t4.validate());
  t4.counts = {4, 5, 1};
  EXPECT_THROW(t4.validate(), Error);

  auto t5 = make_attack_config(AttackType::kType5, 0.08, 30.0, 20, 10, 1);
  t5.counts = {5, 0, 5};
  EXPECT_NO_THROW(t5.validate());

  auto t1 = make_attack_config(AttackType::kType1, 0.08, 30.0, 20, 10, 1);
  t1.counts = {9, 1, 0};
  EXPECT_THROW(t1.validate(), Error);

  auto big = make_attack_config(AttackType::kType1, 0.08, 30.0, 5, 7, 1);
  try {
    big.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(AttackConfig, DefaultCountsSplitEvenly) {
  EXPECT_EQ(default_counts(AttackType::kType1, 350), (SubsetCounts{350, 0, 0}));
  EXPECT_EQ(default_counts(AttackType::kType2, 350), (SubsetCounts{0, 350, 0}));
  EXPECT_EQ(default_counts(AttackType::kType3, 350), (SubsetCounts{0, 0, 350}));
  EXPECT_EQ(default_counts(AttackType::kType4, 350), (SubsetCounts{175, 175, 0}));
  EXPECT_EQ(default_counts(AttackType::kType5, 350), (SubsetCounts{175, 0, 175}));
  const auto six = default_counts(AttackType::kType6, 350);
  EXPECT_EQ(six.total(), 350);
  for (int c : {six.demand, six.start, six.end}) EXPECT_LE(c, 0.4 * 350);
}

TEST(Type1, WorkedExample) {
  // Ch = 6 kW over Ta = 12 slots, d = 6 kWh.
  const auto m = apply_manipulation(Manipulation::kDemand, req(1, 13, 6.0), 2.4, kGrid);
  EXPECT_DOUBLE_EQ(m.request.demand_kwh, 7.9);
  EXPECT_DOUBLE_EQ(m.rate_kw, 7.9);
  EXPECT_EQ(m.request.start_slot, 1);
  EXPECT_EQ(m.request.end_slot, 13);
  EXPECT_EQ(m.total_available, 12);
}

TEST(Type1, WorkedFrameInputs) {
  const auto r = req(121, 139, 20.0);
  const auto m = apply_manipulation(Manipulation::kDemand, r, 2.4, kGrid);
  EXPECT_NEAR(m.request.demand_kwh, 2.4 * 18 / 12.0 - (20.0 * 12 / 18) / 12.0 + 20.0, 1e-12);
  EXPECT_NEAR(m.request.demand_kwh, 22.489, 5e-4);
}

TEST(Type2, WorkedExampleShiftsStartByThree) {
  const auto w = apply_manipulation(Manipulation::kStartShift, req(10, 22, 6.0), 2.4, kGrid);
  EXPECT_DOUBLE_EQ(w.rate_kw, 7.9);
  EXPECT_EQ(w.request.start_slot, 13);
  EXPECT_EQ(w.request.end_slot, 22);
  EXPECT_EQ(w.total_available, 9);
  EXPECT_FALSE(w.clamped);
}

TEST(Type2, StartShiftLandsOnQuarterPast) {
  const auto w = apply_manipulation(Manipulation::kStartShift, req(121, 133, 6.0), 2.4, kGrid);
  EXPECT_EQ(w.request.start_slot, 124);
  EXPECT_EQ(slot_to_time(w.request.start_slot, kGrid), "10:15");
}

TEST(Type3, WorkedExampleShiftsEndByThree) {
  const auto w = apply_manipulation(Manipulation::kEndShift, req(10, 22, 6.0), 2.4, kGrid);
  EXPECT_EQ(w.request.start_slot, 10);
  EXPECT_EQ(w.request.end_slot, 19);
  EXPECT_DOUBLE_EQ(w.request.demand_kwh, 7.9);
}

TEST(Type3, ClampKeepsOneSlot) {
  const auto w = apply_manipulation(Manipulation::kEndShift, req(50, 52, 1.0), 1000.0, kGrid);
  EXPECT_EQ(w.request.end_slot, 51);
  EXPECT_EQ(w.total_available, 1);
  EXPECT_TRUE(w.clamped);
}

TEST(Type2, WrapsAcrossMidnight) {
  const auto w = apply_manipulation(Manipulation::kStartShift, req(287, 11, 6.0), 2.4, kGrid);
  EXPECT_EQ(w.request.start_slot, 2);
  EXPECT_EQ(w.request.end_slot, 11);
}

TEST(RewriteOracle, OracleAgreementOnRandomRequests) {
  std::mt19937_64 rng(20231010);
  std::uniform_int_distribution<int> slot(1, 288), kind(0, 3);
  std::uniform_real_distribution<double> dem(0.1, 60.0), acr(0.0, 5.0);
  for (int i = 0; i < 3000; ++i) {
    const Slot st = slot(rng);
    Slot et = slot(rng);
    if (et == st) continue;
    const double d = dem(rng), a = acr(rng);
    const int k = kind(rng);
    const auto got = apply_manipulation(static_cast<Manipulation>(k), req(st, et, d), a, kGrid);
    const auto want = oracle::run(k, st, et, d, a, 5, 24);
    ASSERT_EQ(got.request.start_slot, want.st);
    ASSERT_EQ(got.request.end_slot, want.et);
    ASSERT_EQ(got.request.demand_kwh, want.d);
    ASSERT_EQ(got.rate_kw, want.ch);
    ASSERT_EQ(got.total_available, want.ta);
    ASSERT_EQ(std::vector<int>(got.availability.bits.begin(), got.availability.bits.end()),
              std::vector<int>(want.av.begin() + 1, want.av.end()));
  }
}

TEST(RewriteOracle, RegroupedDemandMatchesLiteralForm) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> slot(1, 288);
  std::uniform_real_distribution<double> dem(0.1, 60.0), acr(0.0, 5.0);
  const double h = kGrid.slot_hours();
  for (int i = 0; i < 5000; ++i) {
    const Slot st = slot(rng);
    Slot et = slot(rng);
    if (et == st) continue;
    const auto r = req(st, et, dem(rng));
    const double a = acr(rng);
    const auto rate = base_rate(r, kGrid);
    const double literal = a * rate.availability.total_available * h - rate.rate_kw * h + r.demand_kwh;
    const double got = apply_manipulation(Manipulation::kDemand, r, a, kGrid).request.demand_kwh;
    ASSERT_NEAR(got, literal, 1e-12 * std::max(1.0, std::fabs(literal)));
  }
}

TEST(RewriteOracle, FixedPointIsIdentity) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> slot(1, 288), kind(1, 3);
  std::uniform_real_distribution<double> dem(0.1, 60.0);
  for (int i = 0; i < 1000; ++i) {
    const Slot st = slot(rng);
    Slot et = slot(rng);
    if (et == st) continue;
    const auto r = req(st, et, dem(rng));
    const auto rate = base_rate(r, kGrid);
    const double fixed = rate.rate_kw / rate.availability.total_available;
    const auto m = apply_manipulation(static_cast<Manipulation>(kind(rng)), r, fixed, kGrid);
    ASSERT_EQ(m.request, r);
  }
}

TEST(RewriteOracle, DemandMonotoneAndAffineInAcr) {
  const auto r = req(100, 160, 12.0);
  const auto rate = base_rate(r, kGrid);
  const double fixed = rate.rate_kw / 60;
  double prev = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const double a = fixed + 0.1 * i;
    const double d = apply_manipulation(Manipulation::kDemand, r, a, kGrid).request.demand_kwh;
    EXPECT_GE(d, r.demand_kwh - 1e-12);
    if (i > 0) {
      EXPECT_NEAR(d - prev, 0.1 * 60 * kGrid.slot_hours(), 1e-9);
    }
    prev = d;
  }
}

TEST(RewriteOracle, WindowContainmentAndStealthBound) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> slot(1, 288);
  std::uniform_real_distribution<double> dem(0.5, 50.0), c(0.001, 0.1);
  for (int i = 0; i < 2000; ++i) {
    const Slot st = slot(rng);
    Slot et = slot(rng);
    if (et == st) continue;
    const auto r = req(st, et, dem(rng));
    const auto rate = base_rate(r, kGrid);
    const int ta = rate.availability.total_available;
    const double a = std::max(c(rng) * 30.0, rate.rate_kw / ta);
    const auto t2 = apply_manipulation(Manipulation::kStartShift, r, a, kGrid);
    const auto t3 = apply_manipulation(Manipulation::kEndShift, r, a, kGrid);
    ASSERT_EQ(t2.request.end_slot, et);
    ASSERT_EQ(t3.request.start_slot, st);
    ASSERT_LE(t2.total_available, ta);
    ASSERT_LE(t3.total_available, ta);
    ASSERT_GE(t2.total_available, 1);
    ASSERT_LE(t2.rate_kw, rate.rate_kw + a + rate.rate_kw / ta + 1e-9);
  }
}

TEST(AssignTargets, CardinalitiesAndDeterminism) {
  const auto fleet = random_fleet(10, 1);
  const auto cfg = make_attack_config(AttackType::kType1, 0.08, 30.0, 10, 7, 42);
  const auto plan = assign_targets(cfg, fleet.ids());
  EXPECT_EQ(plan.counts(), (SubsetCounts{7, 0, 0}));
  int untouched = 0;
  for (const auto& [id, m] : plan.assignment) untouched += m == Manipulation::kUntouched;
  EXPECT_EQ(untouched, 3);
  EXPECT_EQ(assign_targets(cfg, fleet.ids()).assignment, plan.assignment);
  auto other = cfg;
  other.seed = 43;
  EXPECT_NE(assign_targets(other, fleet.ids()).assignment, plan.assignment);
}

TEST(AssignTargets, MixtureCounts) {
  const auto fleet = random_fleet(100, 2);
  auto cfg = make_attack_config(AttackType::kType6, 0.08, 30.0, 100, 70, 5);
  const auto plan = assign_targets(cfg, fleet.ids());
  EXPECT_EQ(plan.counts(), cfg.counts);
  EXPECT_EQ(plan.assignment.size(), 100u);
}

TEST(AssignTargets, FleetTooSmallIsConfigError) {
  const auto fleet = random_fleet(5, 3);
  const auto cfg = make_attack_config(AttackType::kType1, 0.08, 30.0, 10, 7, 1);
  EXPECT_THROW(assign_targets(cfg, fleet.ids()), Error);
}

TEST(Inject, EmptyPlanAdvancesTimestampOnly) {
  const auto fleet = random_fleet(20, 4);
  AttackPlan plan;
  plan.acr_att_kw = 2.4;
  const auto out = inject(fleet, plan);
  EXPECT_EQ(out.requests(), fleet.requests());
  EXPECT_EQ(out.timestamp_slot(), fleet.timestamp_slot() + 1);
}

TEST(Inject, MixedAttackRaisesAggregateDemand) {
  const auto fleet = random_fleet(500, 5);
  const auto cfg = make_attack_config(AttackType::kType6, 0.08, mean_base_rate(fleet), 500, 350, 9);
  const auto out = inject(fleet, assign_targets(cfg, fleet.ids()));
  double before = 0.0, after = 0.0;
  for (double v : aggregate_profile(fleet)) before += v;
  for (double v : aggregate_profile(out)) after += v;
  EXPECT_GT(after, before);
}

TEST(PlanCsv, RoundTrip) {
  const auto fleet = random_fleet(30, 6);
  const auto cfg = make_attack_config(AttackType::kType5, 0.08, 30.0, 30, 20, 8);
  const auto plan = assign_targets(cfg, fleet.ids());
  std::stringstream ss;
  write_plan_csv(ss, plan);
  const auto back = read_plan_csv(ss, plan.acr_att_kw);
  EXPECT_EQ(back.assignment, plan.assignment);
  std::stringstream bad("evcp_id,type\nA,type9\n");
  EXPECT_THROW(read_plan_csv(bad, 1.0), Error);
}
