#pragma once

// Unsupervised detection of manipulated fleets: per-EVCP deltas between two
// snapshots, a reconstruction autoencoder, a quantile threshold and metrics.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evcma/fleet.hpp"
#include "evcma/nn.hpp"

namespace evcma {

inline constexpr int kRowsPerBlock = 100;
inline constexpr int kDeltaColumns = 3;

enum class SampleLabel : int { kNormal = 0, kAttack = 1 };

/// |N| x 3 matrix of (Δst, Δet, Δd) per EVCP, in fleet order.
struct DeltaMatrix {
  std::vector<std::array<double, 3>> rows;
  SampleLabel label = SampleLabel::kNormal;
  int attack_type = 0;  // 1..6 for attack samples, 0 otherwise
  int group = 0;        // test set the sample belongs to (attack type), 0 if none

  std::size_t size() const noexcept { return rows.size(); }
  friend bool operator==(const DeltaMatrix&, const DeltaMatrix&) = default;
};

/// Signed slot difference on the circular grid, in (-n/2, n/2].
int circular_slot_delta(Slot from, Slot to, const SlotGrid& grid);

/// Row n = (s̄t - st, ēt - et, d̄ - d). Throws Error(kIdMismatch) unless both
/// snapshots list the same ids in the same order.
DeltaMatrix build_delta(const FleetSnapshot& before, const FleetSnapshot& after);

/// Per-column magnitude scale. A column is mapped by y = min(|Δ| / scale, 1),
/// so 0 means "no change".
struct Scaler {
  std::array<double, 3> scale{1.0, 1.0, 1.0};

  /// scale[c] = max |Δ_c| over all rows of `normals` (1 when a column never moves).
  static Scaler fit(std::span<const DeltaMatrix> normals);
  double map(int column, double delta) const;
  friend bool operator==(const Scaler&, const Scaler&) = default;
};

/// One sample as N_x x 100 x 3 with a validity mask (0 on padding rows).
struct NormalizedBatch {
  nn::Tensor data;
  std::vector<std::uint8_t> mask;
  int fleet_rows = 0;
};

/// Reshapes row-major into ceil(|N|/100) blocks of 100 rows. Padding rows take the
/// no-change value and are masked out of the loss. Throws Error(kDimension) if
/// |N| is not a multiple of 100 and `allow_padding` is false, or |N| == 0.
NormalizedBatch normalize_reshape(const DeltaMatrix& delta, const Scaler& scaler,
                                  bool allow_padding = true);

enum class Architecture { kCnn, kMlp };
std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct Autoencoder {
  Architecture arch = Architecture::kCnn;
  nn::Sequential net;
  std::uint64_t seed = 0;
};

/// Conv autoencoder on 100 x 3 blocks: 64-32-16-32-64-3 channels, widths
/// 100 -> 50 -> 25 -> 25 -> 25 -> 50 -> 100.
Autoencoder make_cnn_autoencoder(std::uint64_t seed, double dropout = 0.5);
/// Dense autoencoder on the flattened 300-vector: 300-256-128-64-128-256-300.
Autoencoder make_mlp_autoencoder(std::uint64_t seed);

nn::Tensor reconstruct(const Autoencoder& model, const NormalizedBatch& batch);
/// Mean masked BCE between a sample and its reconstruction.
double sample_loss(const Autoencoder& model, const NormalizedBatch& batch);
/// Mean BCE of y against yhat, yhat clamped to [1e-7, 1 - 1e-7].
double bce_loss(std::span<const double> y, std::span<const double> yhat);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  double initial_validation_loss = 0.0;
  std::vector<double> train_loss;       // per epoch, mean over mini-batches
  std::vector<double> validation_loss;  // per epoch, mean over samples
};

/// Mini-batch Adam on mean BCE. Deterministic per (model seed, config seed).
/// Throws Error(kDegenerate) on an empty training set.
TrainHistory train_autoencoder(Autoencoder& model, std::span<const NormalizedBatch> train,
                               std::span<const NormalizedBatch> validation,
                               const TrainConfig& config);

/// Seeded permutation split: the first round(fraction * n) indices go to validation.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
SplitIndices split_indices(std::size_t n, double validation_fraction, std::uint64_t seed);

inline constexpr int kMinCalibrationSamples = 20;

/// Nearest-rank quantile: the ceil(q*m)-th smallest loss. Throws Error(kDegenerate)
/// for fewer than 20 losses, Error(kConfig) for q outside (0, 1].
double calibrate_threshold(std::span<const double> losses, double q = 0.95);

struct DetectorState {
  Autoencoder model;
  Scaler scaler;
  double threshold = 0.0;
  double quantile = 0.95;
  bool calibrated = false;
};

struct DetectionVerdict {
  bool anomaly = false;
  double loss = 0.0;
};

/// Anomaly iff loss > T_r. Throws Error(kState) when uncalibrated.
DetectionVerdict classify(const DetectorState& state, double loss);
DetectionVerdict classify(const DetectorState& state, const DeltaMatrix& sample);

struct MetricsReport {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;

  static MetricsReport from_counts(int tp, int fp, int fn, int tn);
  MetricsReport& operator+=(const MetricsReport& o);
};

/// Confusion counts of `predicted` against `truth` (true = attack).
MetricsReport evaluate_predictions(std::span<const std::uint8_t> predicted,
                                   std::span<const std::uint8_t> truth);
MetricsReport evaluate(const DetectorState& state, std::span<const DeltaMatrix> samples);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

// Model file: {"format":"evcma-detector","version":1,...}. Weights are stored as flat
// arrays in layer order and round-trip exactly.
nlohmann::json to_json(const DetectorState& state);
DetectorState detector_from_json(const nlohmann::json& j);
void save_detector(const std::string& path, const DetectorState& state);
DetectorState load_detector(const std::string& path);

// Dataset file: {"format":"evcma-deltas","version":1,"samples":[...]}.
nlohmann::json dataset_to_json(std::span<const DeltaMatrix> samples);
std::vector<DeltaMatrix> dataset_from_json(const nlohmann::json& j);
void save_dataset(const std::string& path, std::span<const DeltaMatrix> samples);
std::vector<DeltaMatrix> load_dataset(const std::string& path);

}  // namespace evcma
