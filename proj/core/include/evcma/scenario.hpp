#pragma once

// Experiment orchestration: synthetic fleets and prices, benign request drift,
// labelled delta datasets and the end-to-end run report.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcma/attack.hpp"
#include "evcma/detect.hpp"
#include "evcma/fleet.hpp"
#include "evcma/market.hpp"

namespace evcma {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
/// Named child seed: every random component draws from derive_seed(master, name).
std::uint64_t derive_seed(std::uint64_t master, const std::string& name);

/// Standard normal via Box-Muller, so draws are identical across standard libraries.
double standard_normal(std::mt19937_64& rng);

struct FleetDistribution {
  double morning_weight = 0.65;
  double morning_mean_h = 8.0;
  double morning_sd_h = 1.5;
  double evening_mean_h = 17.5;
  double evening_sd_h = 2.0;
  double duration_median_h = 6.0;
  double duration_sigma = 0.5;
  double duration_min_h = 0.5;
  double duration_max_h = 23.0;
  double demand_mean_kwh = 12.0;
  double demand_sd_kwh = 6.0;
  double demand_min_kwh = 1.0;
  double demand_max_kwh = 60.0;
  double max_rate_kw = 30.0;  // demand never exceeds max_rate * Ta * Δt/60

  void validate() const;
};

/// Seeded fleet of `n_evcp` requests with ids EVCP0001, EVCP0002, ...
/// Throws Error(kConfig) when n_evcp < 1 or the distribution is invalid.
FleetSnapshot generate_fleet(int n_evcp, const FleetDistribution& dist, std::uint64_t seed,
                             const SlotGrid& grid = SlotGrid{});

std::string evcp_name(int index, int n_evcp);

struct PriceModel {
  double base = 0.12;  // $/kWh
  double morning_amp = 0.06;
  double morning_peak_h = 8.0;
  double morning_width_h = 1.5;
  double evening_amp = 0.10;
  double evening_peak_h = 19.0;
  double evening_width_h = 2.0;
  double rt_noise_sd = 0.15;  // relative, per five-minute interval
  double eenc_da = 0.5;
  double eenc_rt = 0.5;
  double pen_rt = 0.06;

  void validate() const;
};

/// Double-peaked DA curve; RT = DA * max(0, 1 + sd * z) per interval.
PriceSeries generate_prices(const PriceModel& model, std::uint64_t seed);

/// Legitimate request edits observed between two consecutive snapshots.
struct BenignChangeModel {
  double p_change = 0.02;
  double p_end = 0.5;
  double p_demand = 0.4;  // remaining probability moves the start
  int max_end_shift = 12;
  int max_start_shift = 6;
  double min_demand_step = 0.5;
  double max_demand_step = 5.0;

  void validate() const;
};

/// Snapshot at t + Δt after benign edits.
FleetSnapshot evolve_benign(const FleetSnapshot& fleet, const BenignChangeModel& model,
                            std::uint64_t seed);

struct SampleSpec {
  int n_evcp = 500;
  FleetDistribution fleet;
  BenignChangeModel benign;
  double c_att = 0.08;
  double hacked_fraction = 0.7;
};

/// Independent seeded fleet, benign drift, delta.
DeltaMatrix normal_sample(const SampleSpec& spec, std::uint64_t seed, const SlotGrid& grid = SlotGrid{});
/// Same as normal_sample, then the attack rewrites the hacked EVCPs from their values at t.
DeltaMatrix attack_sample(const SampleSpec& spec, AttackType type, std::uint64_t seed,
                          const SlotGrid& grid = SlotGrid{});

// ---- experiment configuration ---------------------------------------------

struct FleetSource {
  std::optional<std::string> csv;  // sessions CSV, or synthetic when empty
  int n_evcp = 500;
  FleetDistribution dist;
};

struct PriceSource {
  std::optional<std::string> da_csv;
  std::optional<std::string> rt_csv;
  PriceModel model;
};

struct MarketParams {
  double max_rate_kw = 30.0;
  int history_days = 30;
  int mc_samples = 200;
};

struct AttackParams {
  std::vector<int> types{1, 2, 3, 4, 5, 6};
  double c_att = 0.08;
  double hacked_fraction = 0.7;
  std::optional<double> ch_av_kw;  // fleet mean base rate when absent
};

struct DetectorParams {
  int n_evcp = 500;
  int train_normals = 1000;  // split into training and calibration
  double validation_fraction = 0.2;
  int heldout_normals = 200;
  int test_normals = 180;  // per attack type
  int test_attacks = 20;   // per attack type
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double quantile = 0.95;
  bool baselines = true;
  int iforest_trees = 100;
  int iforest_subsample = 256;
  BenignChangeModel benign;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  SlotGrid grid;
  FleetSource fleet;
  PriceSource prices;
  MarketParams market;
  std::optional<AttackParams> attack;
  std::optional<DetectorParams> detector;
};

/// Throws Error(kConfig) on unknown keys, wrong types or invalid values.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

/// Price series named by the config: CSVs when given, synthetic otherwise.
PriceSeries scenario_prices(const ExperimentConfig& cfg);
/// Realized fleet for the RT day.
FleetSnapshot scenario_fleet(const ExperimentConfig& cfg);
/// Historical days behind the DA estimate. A CSV fleet is its own history.
std::vector<FleetSnapshot> scenario_history(const ExperimentConfig& cfg);
AttackConfig scenario_attack(const ExperimentConfig& cfg, AttackType type, const FleetSnapshot& fleet);

// ---- pipelines -------------------------------------------------------------

struct MarketScenario {
  double ch_av_kw = 0.0;
  double acr_att_kw = 0.0;
  DaCommitment da;
  MarketLedger before;
  std::map<int, MarketLedger> after;        // by attack type
  std::map<int, SurchargeReport> surcharge;  // by attack type
};

MarketScenario run_market(const ExperimentConfig& cfg);

struct DetectorScores {
  std::string name;
  double threshold = 0.0;
  std::map<int, MetricsReport> per_type;
  MetricsReport aggregate;
  double heldout_flagged_fraction = 0.0;
  std::map<int, double> mean_attack_score;  // by type
  double mean_normal_score = 0.0;
};

struct DetectionBenchmark {
  Scaler scaler;
  TrainHistory cnn_history;
  TrainHistory mlp_history;
  DetectorScores cnn;
  std::optional<DetectorScores> mlp;
  std::optional<DetectorScores> iforest;
  DetectorState cnn_state;
};

/// Seeded samples behind the detection benchmark. Test samples carry their
/// attack type in `group`, normals included.
struct DetectionData {
  std::vector<DeltaMatrix> train;
  std::vector<DeltaMatrix> validation;  // calibration set
  std::vector<DeltaMatrix> heldout;
  std::vector<DeltaMatrix> test;
};
DetectionData make_detection_data(const ExperimentConfig& cfg);

/// Freshly initialised model and its training schedule, seeded from the config.
Autoencoder initial_detector_model(const ExperimentConfig& cfg, Architecture arch);
TrainConfig detector_train_config(const ExperimentConfig& cfg, Architecture arch);

/// Train on seeded normals, calibrate on the validation split, score held-out
/// normals and the per-type 180/20 test sets.
DetectionBenchmark run_detection(const ExperimentConfig& cfg);

struct StageTimings {
  std::map<std::string, double> seconds;
  nlohmann::json to_json() const;
};

/// The run report holds only seeded results, so identical configs give identical
/// bytes. Wall-clock timings come back separately.
nlohmann::json run_experiment(const ExperimentConfig& cfg, StageTimings* timings = nullptr);

nlohmann::json to_json(const DetectorScores& s);

/// Seeds of every named component in the run, for the report.
nlohmann::json seed_manifest(const ExperimentConfig& cfg);

}  // namespace evcma
