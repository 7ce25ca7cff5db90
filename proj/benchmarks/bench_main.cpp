#include <benchmark/benchmark.h>

#include <random>

#include "evcma/attack.hpp"
#include "evcma/detect.hpp"
#include "evcma/market.hpp"
#include "evcma/protocol.hpp"
#include "evcma/scenario.hpp"

using namespace evcma;

namespace {

const SlotGrid kGrid(24, 5);

void BM_ApplyManipulation(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> slot(1, 288);
  std::vector<ChargingRequest> rs;
  for (int i = 0; i < 1024; ++i) {
    const int st = slot(rng);
    const int et = st % 288 + 1 + slot(rng) % 100;
    rs.push_back({"E", st, kGrid.wrap(et), 10.0});
  }
  std::size_t i = 0;
  const auto kind = static_cast<Manipulation>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(apply_manipulation(kind, rs[i++ & 1023], 0.2, kGrid));
  }
}
BENCHMARK(BM_ApplyManipulation)->Arg(1)->Arg(2)->Arg(3);

void BM_ScheduleCharging(benchmark::State& state) {
  const auto fleet = generate_fleet(static_cast<int>(state.range(0)), FleetDistribution{}, 3, kGrid);
  const auto prices = generate_prices(PriceModel{}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(schedule_charging(fleet, prices.rt, RateCap{}));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScheduleCharging)->Arg(500)->Arg(5000);

void BM_SettleRt(benchmark::State& state) {
  const auto fleet = generate_fleet(500, FleetDistribution{}, 3, kGrid);
  const auto prices = generate_prices(PriceModel{}, 4);
  const auto da = estimate_da_demand(std::vector<FleetSnapshot>{fleet}, 5, 1, prices, RateCap{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(settle_rt(da, fleet, prices, RateCap{}));
  }
}
BENCHMARK(BM_SettleRt);

void BM_CnnForward(benchmark::State& state) {
  auto ae = make_cnn_autoencoder(1);
  nn::Tensor x(static_cast<int>(state.range(0)), 100, 3, 0.5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ae.net.forward(x));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CnnForward)->Arg(1)->Arg(16);

void BM_CodecRoundTrip(benchmark::State& state) {
  const std::string frame =
      R"([2,"tx-0002","SetChargingProfile",{"connectorId":1,"csChargingProfiles":{"chargingProfileId":7,"chargingProfilePurpose":"TxProfile","chargingSchedule":{"chargingRateUnit":"W","chargingSchedulePeriod":[{"limit":7200.0,"startPeriod":0}],"endTime":"11:30","requestedKwh":20,"startTime":"10:00"},"stackLevel":1}}])";
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode(decode(frame)));
  }
}
BENCHMARK(BM_CodecRoundTrip);

}  // namespace
BENCHMARK_MAIN();
