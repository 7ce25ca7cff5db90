#include "evcma/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "evcma/error.hpp"

namespace evcma {
namespace {

constexpr int kModelFormatVersion = 1;
constexpr int kDatasetFormatVersion = 1;

nn::Tensor concat(std::span<const NormalizedBatch> all, std::span<const std::size_t> pick,
                  std::vector<std::uint8_t>& mask) {
  int n = 0;
  for (auto i : pick) n += all[i].data.n;
  const auto& first = all[pick.front()].data;
  nn::Tensor out(n, first.w, first.c);
  mask.clear();
  mask.reserve(out.size());
  std::size_t off = 0;
  for (auto i : pick) {
    const auto& t = all[i].data;
    if (t.w != first.w || t.c != first.c) {
      throw Error(ErrorKind::kDimension, "training samples have mixed block shapes");
    }
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += t.size();
    mask.insert(mask.end(), all[i].mask.begin(), all[i].mask.end());
  }
  return out;
}

double mean_loss(const Autoencoder& model, std::span<const NormalizedBatch> samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) sum += sample_loss(model, s);
  return sum / static_cast<double>(samples.size());
}

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return in;
}

nlohmann::json parse_file(const std::string& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

}  // namespace

int circular_slot_delta(Slot from, Slot to, const SlotGrid& grid) {
  const int n = grid.n_step();
  int d = (to - from) % n;
  if (d < 0) d += n;
  if (d > n / 2) d -= n;
  return d;
}

DeltaMatrix build_delta(const FleetSnapshot& before, const FleetSnapshot& after) {
  if (!(before.grid() == after.grid())) {
    throw Error(ErrorKind::kIdMismatch, "snapshots use different slot grids");
  }
  if (before.size() != after.size()) {
    throw Error(ErrorKind::kIdMismatch, "snapshots have " + std::to_string(before.size()) +
                                            " and " + std::to_string(after.size()) + " EVCPs");
  }
  DeltaMatrix m;
  m.rows.reserve(before.size());
  const auto& grid = before.grid();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& a = before.requests()[i];
    const auto& b = after.requests()[i];
    if (a.evcp_id != b.evcp_id) {
      throw Error(ErrorKind::kIdMismatch, "row " + std::to_string(i) + ": '" + a.evcp_id +
                                              "' vs '" + b.evcp_id + "'");
    }
    m.rows.push_back({static_cast<double>(circular_slot_delta(a.start_slot, b.start_slot, grid)),
                      static_cast<double>(circular_slot_delta(a.end_slot, b.end_slot, grid)),
                      b.demand_kwh - a.demand_kwh});
  }
  return m;
}

Scaler Scaler::fit(std::span<const DeltaMatrix> normals) {
  std::array<double, 3> mx{0.0, 0.0, 0.0};
  for (const auto& d : normals) {
    for (const auto& r : d.rows) {
      for (int c = 0; c < 3; ++c) mx[c] = std::max(mx[c], std::abs(r[c]));
    }
  }
  Scaler s;
  for (int c = 0; c < 3; ++c) s.scale[c] = mx[c] > 0.0 ? mx[c] : 1.0;
  return s;
}

double Scaler::map(int column, double delta) const {
  return std::min(std::abs(delta) / scale.at(static_cast<std::size_t>(column)), 1.0);
}

NormalizedBatch normalize_reshape(const DeltaMatrix& delta, const Scaler& scaler,
                                  bool allow_padding) {
  const std::size_t n = delta.size();
  if (n == 0) throw Error(ErrorKind::kDimension, "cannot reshape an empty fleet");
  if (n % kRowsPerBlock != 0 && !allow_padding) {
    throw Error(ErrorKind::kDimension,
                "fleet size " + std::to_string(n) + " is not a multiple of 100 and padding is off");
  }
  const int blocks = static_cast<int>((n + kRowsPerBlock - 1) / kRowsPerBlock);
  NormalizedBatch b;
  b.fleet_rows = static_cast<int>(n);
  b.data = nn::Tensor(blocks, kRowsPerBlock, kDeltaColumns, 0.0);
  b.mask.assign(b.data.size(), 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (int c = 0; c < kDeltaColumns; ++c) {
      const std::size_t idx = r * kDeltaColumns + static_cast<std::size_t>(c);
      b.data.data[idx] = scaler.map(c, delta.rows[r][static_cast<std::size_t>(c)]);
      b.mask[idx] = 1;
    }
  }
  return b;
}

std::string to_string(Architecture a) { return a == Architecture::kCnn ? "cnn" : "mlp"; }

Architecture architecture_from_string(const std::string& s) {
  if (s == "cnn") return Architecture::kCnn;
  if (s == "mlp") return Architecture::kMlp;
  throw Error(ErrorKind::kConfig, "unknown architecture '" + s + "'");
}

Autoencoder make_cnn_autoencoder(std::uint64_t seed, double dropout) {
  Autoencoder m;
  m.arch = Architecture::kCnn;
  m.seed = seed;
  auto& net = m.net;
  net.add<nn::Conv1d>(3, 64);
  net.add<nn::Relu>();
  net.add<nn::MaxPool2>();
  net.add<nn::Dropout>(dropout);
  net.add<nn::Conv1d>(64, 32);
  net.add<nn::Relu>();
  net.add<nn::MaxPool2>();
  net.add<nn::Dropout>(dropout);
  net.add<nn::Conv1d>(32, 16);
  net.add<nn::Relu>();
  net.add<nn::Conv1d>(16, 32);
  net.add<nn::Relu>();
  net.add<nn::Upsample2>();
  net.add<nn::Dropout>(dropout);
  net.add<nn::Conv1d>(32, 64);
  net.add<nn::Relu>();
  net.add<nn::Upsample2>();
  net.add<nn::Dropout>(dropout);
  net.add<nn::Conv1d>(64, 3);
  net.add<nn::Sigmoid>();
  nn::Rng rng(seed);
  net.init(rng);
  return m;
}

Autoencoder make_mlp_autoencoder(std::uint64_t seed) {
  Autoencoder m;
  m.arch = Architecture::kMlp;
  m.seed = seed;
  auto& net = m.net;
  net.add<nn::Flatten>();
  const int widths[] = {300, 256, 128, 64, 128, 256, 300};
  for (int i = 0; i + 1 < 7; ++i) {
    net.add<nn::Dense>(widths[i], widths[i + 1]);
    if (i + 2 < 7) {
      net.add<nn::Relu>();
    } else {
      net.add<nn::Sigmoid>();
    }
  }
  net.add<nn::Unflatten>(kRowsPerBlock, kDeltaColumns);
  nn::Rng rng(seed);
  net.init(rng);
  return m;
}

nn::Tensor reconstruct(const Autoencoder& model, const NormalizedBatch& batch) {
  if (batch.data.w != kRowsPerBlock || batch.data.c != kDeltaColumns) {
    throw Error(ErrorKind::kDimension, "sample blocks must be 100 x 3");
  }
  return model.net.forward(batch.data);
}

double sample_loss(const Autoencoder& model, const NormalizedBatch& batch) {
  return nn::bce_mean(batch.data, reconstruct(model, batch), batch.mask);
}

double bce_loss(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw Error(ErrorKind::kDimension, "bce: length mismatch");
  nn::Tensor a(1, 1, static_cast<int>(y.size()));
  nn::Tensor b(1, 1, static_cast<int>(y.size()));
  std::copy(y.begin(), y.end(), a.data.begin());
  std::copy(yhat.begin(), yhat.end(), b.data.begin());
  return nn::bce_mean(a, b);
}

SplitIndices split_indices(std::size_t n, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorKind::kConfig, "validation fraction must be in [0, 1)");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  nn::Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto nv = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  SplitIndices s;
  s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nv));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(nv), idx.end());
  return s;
}

TrainHistory train_autoencoder(Autoencoder& model, std::span<const NormalizedBatch> train,
                               std::span<const NormalizedBatch> validation,
                               const TrainConfig& config) {
  if (train.empty()) throw Error(ErrorKind::kDegenerate, "no training samples");
  if (config.epochs < 0 || config.batch_size <= 0) {
    throw Error(ErrorKind::kConfig, "epochs must be >= 0 and batch size >= 1");
  }
  nn::Adam opt(config.lr);
  nn::Rng rng(config.seed);
  TrainHistory hist;
  hist.initial_validation_loss = mean_loss(model, validation);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::uint8_t> mask;
  const auto params = model.net.params();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> pick(order.data() + start, end - start);
      const auto x = concat(train, pick, mask);
      model.net.zero_grad();
      const auto y = model.net.forward_train(x, rng);
      epoch_loss += nn::bce_mean(x, y, mask);
      model.net.backward(nn::bce_grad(x, y, mask));
      opt.step(params);
      ++batches;
    }
    hist.train_loss.push_back(epoch_loss / batches);
    hist.validation_loss.push_back(mean_loss(model, validation));
  }
  return hist;
}

double calibrate_threshold(std::span<const double> losses, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorKind::kConfig, "quantile must lie in (0, 1]");
  if (losses.size() < static_cast<std::size_t>(kMinCalibrationSamples)) {
    throw Error(ErrorKind::kDegenerate, "calibration needs at least 20 samples, got " +
                                            std::to_string(losses.size()));
  }
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());
  // ceil(q*m) in exact arithmetic; guard against q*m landing just above an integer.
  auto rank = static_cast<std::size_t>(std::ceil(q * m - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

DetectionVerdict classify(const DetectorState& state, double loss) {
  if (!state.calibrated) throw Error(ErrorKind::kState, "detector has not been calibrated");
  return {loss > state.threshold, loss};
}

DetectionVerdict classify(const DetectorState& state, const DeltaMatrix& sample) {
  if (!state.calibrated) throw Error(ErrorKind::kState, "detector has not been calibrated");
  return classify(state, sample_loss(state.model, normalize_reshape(sample, state.scaler)));
}

MetricsReport MetricsReport::from_counts(int tp, int fp, int fn, int tn) {
  MetricsReport m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  m.precision = safe_div(tp, tp + fp);
  m.recall = safe_div(tp, tp + fn);
  m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
  m.accuracy = safe_div(tp + tn, tp + fp + fn + tn);
  return m;
}

MetricsReport& MetricsReport::operator+=(const MetricsReport& o) {
  *this = from_counts(tp + o.tp, fp + o.fp, fn + o.fn, tn + o.tn);
  return *this;
}

MetricsReport evaluate_predictions(std::span<const std::uint8_t> predicted,
                                   std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorKind::kDimension, "prediction and label counts differ");
  }
  int tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    if (predicted[i] && !truth[i]) ++fp;
    if (!predicted[i] && truth[i]) ++fn;
    if (!predicted[i] && !truth[i]) ++tn;
  }
  return MetricsReport::from_counts(tp, fp, fn, tn);
}

MetricsReport evaluate(const DetectorState& state, std::span<const DeltaMatrix> samples) {
  std::vector<std::uint8_t> pred, truth;
  pred.reserve(samples.size());
  truth.reserve(samples.size());
  for (const auto& s : samples) {
    pred.push_back(classify(state, s).anomaly ? 1 : 0);
    truth.push_back(s.label == SampleLabel::kAttack ? 1 : 0);
  }
  return evaluate_predictions(pred, truth);
}

nlohmann::json to_json(const MetricsReport& m) {
  return {{"tp", m.tp},         {"fp", m.fp},         {"fn", m.fn}, {"tn", m.tn},
          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"accuracy", m.accuracy}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  try {
    return MetricsReport::from_counts(j.at("tp").get<int>(), j.at("fp").get<int>(),
                                      j.at("fn").get<int>(), j.at("tn").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("metrics json: ") + e.what());
  }
}

nlohmann::json to_json(const DetectorState& state) {
  nlohmann::json weights = nlohmann::json::array();
  auto& net = const_cast<nn::Sequential&>(state.model.net);
  for (auto* p : net.params()) weights.push_back(p->value);
  return {
      {"format", "evcma-detector"},
      {"version", kModelFormatVersion},
      {"architecture", to_string(state.model.arch)},
      {"layers", state.model.net.architecture()},
      {"weights", weights},
      {"scaler", state.scaler.scale},
      {"threshold", state.threshold},
      {"quantile", state.quantile},
      {"calibrated", state.calibrated},
      {"seed", state.model.seed},
  };
}

DetectorState detector_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "evcma-detector") {
      throw Error(ErrorKind::kParse, "not a detector model file");
    }
    if (j.at("version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorKind::kParse, "unsupported model version");
    }
    DetectorState s;
    s.model.arch = architecture_from_string(j.at("architecture").get<std::string>());
    s.model.seed = j.at("seed").get<std::uint64_t>();
    s.model.net = nn::Sequential::from_architecture(j.at("layers"));
    const auto& weights = j.at("weights");
    auto params = s.model.net.params();
    if (weights.size() != params.size()) {
      throw Error(ErrorKind::kParse, "model file has " + std::to_string(weights.size()) +
                                         " weight arrays for " + std::to_string(params.size()) +
                                         " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto v = weights[i].get<std::vector<double>>();
      if (v.size() != params[i]->value.size()) {
        throw Error(ErrorKind::kParse, "weight array " + std::to_string(i) + " has wrong length");
      }
      params[i]->value = std::move(v);
    }
    s.scaler.scale = j.at("scaler").get<std::array<double, 3>>();
    s.threshold = j.at("threshold").get<double>();
    s.quantile = j.at("quantile").get<double>();
    s.calibrated = j.at("calibrated").get<bool>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("model json: ") + e.what());
  }
}

void save_detector(const std::string& path, const DetectorState& state) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << to_json(state).dump() << '\n';
}

DetectorState load_detector(const std::string& path) { return detector_from_json(parse_file(path)); }

nlohmann::json dataset_to_json(std::span<const DeltaMatrix> samples) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : s.rows) rows.push_back({r[0], r[1], r[2]});
    arr.push_back({{"label", s.label == SampleLabel::kAttack ? "attack" : "normal"},
                   {"attack_type", s.attack_type},
                   {"group", s.group},
                   {"rows", rows}});
  }
  return {{"format", "evcma-deltas"}, {"version", kDatasetFormatVersion}, {"samples", arr}};
}

std::vector<DeltaMatrix> dataset_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "evcma-deltas") {
      throw Error(ErrorKind::kParse, "not a delta dataset file");
    }
    std::vector<DeltaMatrix> out;
    for (const auto& s : j.at("samples")) {
      DeltaMatrix d;
      const auto label = s.at("label").get<std::string>();
      if (label != "normal" && label != "attack") {
        throw Error(ErrorKind::kParse, "sample label must be normal or attack");
      }
      d.label = label == "attack" ? SampleLabel::kAttack : SampleLabel::kNormal;
      d.attack_type = s.at("attack_type").get<int>();
      d.group = s.value("group", 0);
      for (const auto& r : s.at("rows")) {
        if (!r.is_array() || r.size() != 3) throw Error(ErrorKind::kParse, "delta rows need 3 values");
        d.rows.push_back({r[0].get<double>(), r[1].get<double>(), r[2].get<double>()});
      }
      out.push_back(std::move(d));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("dataset json: ") + e.what());
  }
}

void save_dataset(const std::string& path, std::span<const DeltaMatrix> samples) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << dataset_to_json(samples).dump() << '\n';
}

std::vector<DeltaMatrix> load_dataset(const std::string& path) {
  return dataset_from_json(parse_file(path));
}

}  // namespace evcma
