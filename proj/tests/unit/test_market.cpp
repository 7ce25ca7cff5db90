#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evcma/error.hpp"
#include "evcma/market.hpp"
#include "market_oracle.hpp"

using namespace evcma;

namespace {

const SlotGrid kGrid;

PriceSeries flat_prices(double da, double rt) {
  PriceSeries p;
  p.da.assign(24, da);
  p.rt.assign(288, rt);
  return p;
}

ChargingRequest req(Slot st, Slot et, double d, std::string id) {
  return ChargingRequest{std::move(id), st, et, d};
}

DaCommitment flat_bid(double kw) {
  DaCommitment da;
  da.bid_kw.assign(24, kw);
  return da;
}

FleetSchedule flat_schedule(double kw) {
  FleetSchedule s;
  s.total_kw.assign(288, kw);
  return s;
}

FleetSnapshot to_fleet(const std::vector<oracle::SmallEvcp>& v) {
  std::vector<ChargingRequest> rs;
  for (std::size_t i = 0; i < v.size(); ++i) {
    rs.push_back(req(v[i].first_slot + 1, kGrid.wrap(v[i].first_slot + 1 + v[i].window), v[i].demand_kwh,
                     "E" + std::to_string(i)));
  }
  return FleetSnapshot(kGrid, rs);
}

}  // namespace

TEST(PriceSeries, Validation) {
  auto p = flat_prices(0.1, 0.1);
  EXPECT_NO_THROW(p.validate());
  p.rt.pop_back();
  try {
    p.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
  p = flat_prices(0.1, 0.1);
  p.da[3] = -1.0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Schedule, FlatPricesSpreadFromEarliestSlot) {
  const FleetSnapshot f(kGrid, {req(1, 13, 6.0, "A")});
  const auto s = schedule_charging(f, flat_prices(0.1, 0.1).rt, RateCap{30.0});
  // 6 kWh fits in 2.4 slots at 30 kW: two full slots, then the remainder.
  EXPECT_DOUBLE_EQ(s.evcps[0].rate_kw[0], 30.0);
  EXPECT_DOUBLE_EQ(s.evcps[0].rate_kw[1], 30.0);
  EXPECT_NEAR(s.evcps[0].rate_kw[2], 12.0, 1e-9);
  EXPECT_DOUBLE_EQ(s.evcps[0].rate_kw[3], 0.0);
  const auto low_cap = schedule_charging(f, flat_prices(0.1, 0.1).rt, RateCap{0.5});
  for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(low_cap.evcps[0].rate_kw[i], 0.5);
  EXPECT_NEAR(low_cap.evcps[0].ens_kwh, 5.5, 1e-12);
}

TEST(Schedule, CapArithmetic) {
  const FleetSnapshot f(kGrid, {req(1, 13, 30.0, "A")});
  const auto at30 = schedule_charging(f, flat_prices(0.1, 0.1).rt, RateCap{30.0});
  EXPECT_NEAR(at30.delivered_kwh, 30.0, 1e-12);
  EXPECT_DOUBLE_EQ(at30.ens_kwh, 0.0);
  const auto at20 = schedule_charging(f, flat_prices(0.1, 0.1).rt, RateCap{20.0});
  EXPECT_NEAR(at20.delivered_kwh, 20.0, 1e-12);
  EXPECT_NEAR(at20.ens_kwh, 10.0, 1e-12);
}

TEST(Schedule, CheapestSlotsFirstAndEnergyBalance) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> pr(0.01, 0.5), dem(0.5, 40);
  std::uniform_int_distribution<int> slot(1, 288);
  std::vector<double> prices(288);
  for (auto& p : prices) p = pr(rng);
  std::vector<ChargingRequest> rs;
  for (int i = 0; i < 50; ++i) {
    Slot st = slot(rng), et = slot(rng);
    if (st == et) et = kGrid.wrap(st + 3);
    rs.push_back(req(st, et, dem(rng), "E" + std::to_string(i)));
  }
  const FleetSnapshot f(kGrid, rs);
  const auto s = schedule_charging(f, prices, RateCap{7.0});
  for (std::size_t n = 0; n < rs.size(); ++n) {
    const auto& e = s.evcps[n];
    double energy = 0.0;
    const auto av = build_availability(rs[n], kGrid);
    for (int i = 0; i < 288; ++i) {
      energy += e.rate_kw[i] / 12.0;
      if (!av.bits[i]) {
        EXPECT_EQ(e.rate_kw[i], 0.0);
        continue;
      }
      EXPECT_LE(e.rate_kw[i], 7.0 + 1e-12);
    }
    EXPECT_NEAR(energy + e.ens_kwh, rs[n].demand_kwh, 1e-9);
    // Every used slot is at least as cheap as every idle one, and at most one slot is partial.
    double dearest_used = 0.0, cheapest_idle = 1e9;
    int partial = 0;
    for (int i = 0; i < 288; ++i) {
      if (!av.bits[i]) continue;
      if (e.rate_kw[i] > 0) dearest_used = std::max(dearest_used, prices[i]);
      if (e.rate_kw[i] == 0) cheapest_idle = std::min(cheapest_idle, prices[i]);
      partial += e.rate_kw[i] > 0 && e.rate_kw[i] < 7.0;
    }
    EXPECT_LE(dearest_used, cheapest_idle);
    EXPECT_LE(partial, 1);
  }
  EXPECT_EQ(schedule_charging(FleetSnapshot(kGrid, {}), prices, RateCap{}).total_kw,
            std::vector<double>(288, 0.0));
}

TEST(Schedule, PriceLengthMismatch) {
  const FleetSnapshot f(kGrid, {req(1, 13, 6.0, "A")});
  std::vector<double> short_prices(100, 0.1);
  EXPECT_THROW(schedule_charging(f, short_prices, RateCap{}), Error);
  EXPECT_THROW(schedule_charging(f, flat_prices(0.1, 0.1).rt, RateCap{0.0}), Error);
}

TEST(SettleDa, HandExamples) {
  auto p = flat_prices(0.05, 0.1);
  EXPECT_DOUBLE_EQ(settle_da(std::vector<double>(24, 0.0), p, 0.0).total, 0.0);
  EXPECT_NEAR(settle_da(std::vector<double>(24, 100.0), p, 0.0).total, 120.0, 1e-9);
  p.eenc_da = 0.2;
  EXPECT_NEAR(settle_da(std::vector<double>(24, 0.0), p, 50.0).total, 10.0, 1e-12);
  EXPECT_THROW(settle_da(std::vector<double>(23, 0.0), p, 0.0), Error);
}

TEST(SettleRt, BalancedCase) {
  const auto L = settle_rt(flat_bid(100.0), flat_schedule(100.0), flat_prices(0.1, 0.1));
  EXPECT_DOUBLE_EQ(L.cost_inc_rt, 0.0);
  EXPECT_DOUBLE_EQ(L.cost_pen_rt, 0.0);
  EXPECT_DOUBLE_EQ(L.cost_rt, L.cost_eenc_rt);
}

TEST(SettleRt, SingleIntervalPenaltyAndIncrement) {
  auto p = flat_prices(0.1, 0.06);
  p.pen_rt = 0.12;
  auto below = flat_schedule(100.0);
  below.total_kw[0] = 80.0;
  auto L = settle_rt(flat_bid(100.0), below, p);
  EXPECT_DOUBLE_EQ(L.pen_kw[0], 20.0);
  EXPECT_NEAR(L.cost_pen_rt, 0.20, 1e-12);
  auto above = flat_schedule(100.0);
  above.total_kw[0] = 120.0;
  L = settle_rt(flat_bid(100.0), above, p);
  EXPECT_DOUBLE_EQ(L.inc_kw[0], 20.0);
  EXPECT_NEAR(L.cost_inc_rt, 0.10, 1e-12);
}

TEST(SettleRt, BalanceIsExactAndComplementary) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> kw(0.0, 500.0);
  std::uniform_int_distribution<int> coin(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    DaCommitment da;
    for (int h = 0; h < 24; ++h) da.bid_kw.push_back(kw(rng) / 3.0);
    FleetSchedule s;
    for (int t = 0; t < 288; ++t) s.total_kw.push_back(coin(rng) == 0 ? da.bid_kw[t / 12] : kw(rng) / 7.0);
    const auto L = settle_rt(da, s, flat_prices(0.1, 0.2));
    for (int t = 0; t < 288; ++t) {
      ASSERT_EQ(L.da_bid_kw[t / 12] + L.inc_kw[t], L.rt_load_kw[t] + L.pen_kw[t]);
      ASSERT_EQ(L.pen_kw[t] * L.inc_kw[t], 0.0);
      ASSERT_GE(L.pen_kw[t], 0.0);
      ASSERT_GE(L.inc_kw[t], 0.0);
    }
    EXPECT_DOUBLE_EQ(L.cost_total, L.cost_da + L.cost_rt);
  }
}

TEST(SplitBalance, AwkwardFloatingPointValues) {
  for (double da : {0.1, 0.3, 1e-17, 123456.789, 1.0 / 3.0}) {
    for (double rt : {0.2, 0.7, 3e-16, 98765.4321, 2.0 / 3.0, 0.0}) {
      std::vector<double> a{da}, b{rt};
      snap_to_common_grid(a, b);
      EXPECT_NEAR(a[0], da, 1e-11);
      EXPECT_NEAR(b[0], rt, 1e-11);
      const auto s = split_balance(a[0], b[0]);
      EXPECT_EQ(a[0] + s.inc_kw, b[0] + s.pen_kw) << da << " " << rt;
      EXPECT_EQ(a[0] - s.pen_kw + s.inc_kw, b[0]) << da << " " << rt;
      EXPECT_EQ(s.pen_kw * s.inc_kw, 0.0);
    }
  }
}

TEST(SnapToCommonGrid, RandomPairsBalanceExactly) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  for (int i = 0; i < 200000; ++i) {
    std::vector<double> a{u(rng)}, b{u(rng) * (i % 7 == 0 ? 1e-9 : 1.0)};
    const double q = snap_to_common_grid(a, b);
    ASSERT_GT(q, 0.0);
    const auto s = split_balance(a[0], b[0]);
    ASSERT_EQ(a[0] + s.inc_kw, b[0] + s.pen_kw);
    ASSERT_EQ(a[0] - s.pen_kw + s.inc_kw, b[0]);
  }
  std::vector<double> z{0.0}, w{0.0};
  EXPECT_EQ(snap_to_common_grid(z, w), 0.0);
}

TEST(SettleRt, DimensionErrors) {
  DaCommitment da;
  da.bid_kw.assign(23, 0.0);
  EXPECT_THROW(settle_rt(da, flat_schedule(0.0), flat_prices(0.1, 0.1)), Error);
  FleetSchedule s;
  s.total_kw.assign(100, 0.0);
  EXPECT_THROW(settle_rt(flat_bid(0.0), s, flat_prices(0.1, 0.1)), Error);
}

TEST(EstimateDa, SingleDayIsThatDaysProfile) {
  const FleetSnapshot day(kGrid, {req(13, 37, 10.0, "A"), req(100, 140, 25.0, "B")});
  const auto p = flat_prices(0.1, 0.1);
  const std::vector<FleetSnapshot> hist{day};
  const auto one = estimate_da_demand(hist, 1, 1, p, RateCap{});
  const auto many = estimate_da_demand(hist, 37, 9, p, RateCap{});
  const auto direct = schedule_charging(day, p.da_per_interval(), RateCap{}).hourly_mean_kw();
  for (int h = 0; h < 24; ++h) {
    EXPECT_NEAR(one.bid_kw[h], direct[h], 1e-12);
    EXPECT_NEAR(many.bid_kw[h], direct[h], 1e-9);
  }
  EXPECT_THROW(estimate_da_demand(hist, 0, 1, p, RateCap{}), Error);
  EXPECT_THROW(estimate_da_demand(std::vector<FleetSnapshot>{}, 5, 1, p, RateCap{}), Error);
}

TEST(EstimateDa, TwoDaysAverageTowardTheMean) {
  // Flat 100 kW and 200 kW days: every EVCP draws 1 kW around the clock.
  std::vector<ChargingRequest> a, b;
  for (int i = 0; i < 100; ++i) a.push_back(req(1, 288, 287.0 / 12.0, "E" + std::to_string(i)));
  for (int i = 0; i < 200; ++i) b.push_back(req(1, 288, 287.0 / 12.0, "E" + std::to_string(i)));
  const std::vector<FleetSnapshot> hist{FleetSnapshot(kGrid, a), FleetSnapshot(kGrid, b)};
  const auto p = flat_prices(0.1, 0.1);
  const auto est = estimate_da_demand(hist, 4000, 3, p, RateCap{1.0});
  for (int h = 1; h < 23; ++h) EXPECT_NEAR(est.bid_kw[h], 150.0, 5.0);
  const auto again = estimate_da_demand(hist, 4000, 3, p, RateCap{1.0});
  EXPECT_EQ(est.bid_kw, again.bid_kw);
}

TEST(Surcharge, IdenticalAndDelta) {
  const auto p = flat_prices(0.1, 0.2);
  const auto L = settle_rt(flat_bid(100.0), flat_schedule(90.0), p);
  const auto same = surcharge(L, L);
  EXPECT_DOUBLE_EQ(same.surcharge, 0.0);
  EXPECT_DOUBLE_EQ(same.percent, 0.0);
  MarketLedger before, after;
  before.cost_total = 13182.0;
  after.cost_total = 14903.0;
  const auto r = surcharge(before, after);
  EXPECT_DOUBLE_EQ(r.surcharge, 1721.0);
  EXPECT_NEAR(r.percent, 13.06, 0.01);
}

TEST(Surcharge, MoreDemandNeverCheaperOnFlatPrices) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> slot(1, 288);
  std::uniform_real_distribution<double> dem(1, 30);
  std::vector<ChargingRequest> base;
  for (int i = 0; i < 40; ++i) {
    Slot st = slot(rng), et = slot(rng);
    if (st == et) et = kGrid.wrap(st + 5);
    base.push_back(req(st, et, dem(rng), "E" + std::to_string(i)));
  }
  const auto p = flat_prices(0.1, 0.15);
  const FleetSnapshot f(kGrid, base);
  const auto da = estimate_da_demand(std::vector<FleetSnapshot>{f}, 1, 1, p, RateCap{});
  double prev = settle_rt(da, f, p, RateCap{}).cost_total;
  for (double extra : {0.5, 1.0, 2.0, 4.0}) {
    auto more = base;
    for (auto& r : more) r.demand_kwh += extra;
    const double c = settle_rt(da, FleetSnapshot(kGrid, more), p, RateCap{}).cost_total;
    EXPECT_GE(c, prev - 1e-9);
    prev = c;
  }
}

TEST(BruteForce, MatchesEnumerationOnSmallInstances) {
  std::mt19937_64 rng(20231010);
  std::uniform_real_distribution<double> pr(0.01, 0.4);
  std::uniform_int_distribution<int> slot(0, 287), window(1, 4), units(1, 16), count(1, 2);
  for (int trial = 0; trial < 40; ++trial) {
    oracle::SmallMarket m;
    for (int h = 0; h < 24; ++h) m.da.push_back(pr(rng));
    for (int t = 0; t < 288; ++t) m.rt.push_back(pr(rng));
    m.cap_kw = 2.0;
    const auto make = [&] {
      std::vector<oracle::SmallEvcp> v;
      const int n = count(rng);
      for (int i = 0; i < n; ++i) {
        oracle::SmallEvcp e;
        e.first_slot = std::min(slot(rng), 287 - 4);
        e.window = window(rng);
        e.demand_kwh = units(rng) * oracle::kStepKw * oracle::kSlotH;
        v.push_back(e);
      }
      return v;
    };
    const auto history = make();
    const auto realized = make();
    const auto want = oracle::settle(m, history, realized);

    PriceSeries p;
    p.da = m.da;
    p.rt = m.rt;
    const auto da = estimate_da_demand(std::vector<FleetSnapshot>{to_fleet(history)}, 3, 1, p, RateCap{m.cap_kw});
    const auto L = settle_rt(da, to_fleet(realized), p, RateCap{m.cap_kw});
    ASSERT_NEAR(L.cost_total, want.total, 1e-9) << "trial " << trial;
    ASSERT_NEAR(L.cost_pen_rt, want.pen, 1e-9);
    ASSERT_NEAR(L.cost_inc_rt, want.inc, 1e-9);
    ASSERT_NEAR(L.cost_eenc_rt, want.eenc_rt, 1e-9);
  }
}

TEST(PriceCsv, RoundTripAndErrors) {
  PriceSeries p = flat_prices(0.1, 0.2);
  for (int i = 0; i < 288; ++i) p.rt[i] = 0.001 * i + 0.0123456789;
  std::stringstream da, rt;
  write_da_price_csv(da, p);
  write_rt_price_csv(rt, p);
  const auto back = read_price_csv(da, rt);
  EXPECT_EQ(back.da, p.da);
  EXPECT_EQ(back.rt, p.rt);

  std::stringstream short_da("hour,da_price\n1,0.1\n"), rt2(rt.str());
  EXPECT_THROW(read_price_csv(short_da, rt2), Error);
}

TEST(LedgerJson, HasEveryCostField) {
  const FleetSnapshot f(kGrid, {req(1, 13, 6.0, "A")});
  const auto p = flat_prices(0.1, 0.1);
  const auto L = settle_rt(flat_bid(1.0), f, p, RateCap{});
  const auto j = to_json(L);
  for (const char* k : {"ch_da", "eenc_da", "da", "inc_rt", "pen_rt", "eenc_rt", "rt", "total"}) {
    EXPECT_TRUE(j.at("costs").contains(k)) << k;
  }
  EXPECT_DOUBLE_EQ(j["costs"]["total"].get<double>(), total_cost(L));
}
