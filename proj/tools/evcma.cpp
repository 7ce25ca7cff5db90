// evcma: command-line front end for fleet generation, attack injection, market
// settlement, detection and OCPP frame handling.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcma/attack.hpp"
#include "evcma/detect.hpp"
#include "evcma/error.hpp"
#include "evcma/fleet.hpp"
#include "evcma/market.hpp"
#include "evcma/protocol.hpp"
#include "evcma/scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evcma;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitMismatch = 1;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return 65;
    case ErrorKind::kInvalidRequest: return 66;
    case ErrorKind::kConfig: return 67;
    case ErrorKind::kDimension: return 68;
    case ErrorKind::kIdMismatch: return 69;
    case ErrorKind::kProtocol: return 70;
    case ErrorKind::kState: return 71;
    case ErrorKind::kIo: return 72;
    case ErrorKind::kDegenerate: return 73;
  }
  return 1;
}

const char* kConfigSchema = R"(config file (JSON):
  seed          integer, required; every random component derives from it
  grid          {horizon_hours: 24, slot_minutes: 5}
  fleet         {n_evcp, csv?, distribution?{morning_weight, morning_mean_h, ...}}
  prices        {da_csv?, rt_csv?, model?{base, morning_amp, ..., eenc_da, eenc_rt, pen_rt}}
  market        {max_rate_kw, history_days, mc_samples}
  attack        {types: [1..6], c_att, hacked_fraction, ch_av_kw?}   (optional)
  detector      {n_evcp, train_normals, epochs, quantile, baselines, ...} (optional)
see docs/protocol.md and README.md for the full key list.
)";

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  ExperimentConfig load() const {
    auto cfg = load_config(config);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the master seed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

template <typename F>
void write_stream(const std::string& path, F&& body) {
  std::ostringstream ss;
  body(ss);
  write_text(path, ss.str());
}

AttackType parse_type(int t) {
  if (t < 1 || t > 6) throw Error(ErrorKind::kConfig, "attack type must be 1..6");
  return static_cast<AttackType>(t);
}

json commitment_json(const DaCommitment& da) {
  return {{"format", "evcma-da-bids"},
          {"bid_kw", da.bid_kw},
          {"ens_kwh", da.ens_kwh},
          {"demand_kwh", da.demand_kwh}};
}

DaCommitment commitment_from_json(const json& j) {
  try {
    DaCommitment da;
    da.bid_kw = j.at("bid_kw").get<std::vector<double>>();
    da.ens_kwh = j.at("ens_kwh").get<double>();
    da.demand_kwh = j.at("demand_kwh").get<double>();
    return da;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("DA bid file: ") + e.what());
  }
}

DaCommitment estimate_for(const ExperimentConfig& cfg, const PriceSeries& prices) {
  const auto history = scenario_history(cfg);
  return estimate_da_demand(history, cfg.market.mc_samples, derive_seed(cfg.seed, "market/mc"),
                            prices, RateCap{cfg.market.max_rate_kw});
}

json metrics_by_group(const DetectorState& state, const std::vector<DeltaMatrix>& samples) {
  std::map<int, std::vector<DeltaMatrix>> groups;
  for (const auto& s : samples) groups[s.group].push_back(s);
  MetricsReport total;
  json per = json::object();
  for (const auto& [g, v] : groups) {
    const auto m = evaluate(state, v);
    total += m;
    per[g == 0 ? "ungrouped" : "type" + std::to_string(g)] = to_json(m);
  }
  return {{"format", "evcma-metrics"}, {"threshold", state.threshold}, {"per_type", per},
          {"aggregate", to_json(total)}};
}

std::vector<fs::path> frame_files(const std::string& in) {
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.emplace_back(in);
  }
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evcma: charge-manipulation attack simulation, market impact and detection"};
  app.require_subcommand(1);
  app.footer(kConfigSchema);
  std::string stage;
  std::function<int()> action;

  // ---- fleet ----
  auto* fleet = app.add_subcommand("fleet", "synthetic fleets");
  fleet->require_subcommand(1);
  Common fleet_c;
  std::string fleet_out, fleet_da_out, fleet_rt_out;
  std::optional<int> fleet_day;
  auto* fleet_gen = fleet->add_subcommand("gen", "write the realized-day sessions CSV");
  add_common(fleet_gen, fleet_c);
  fleet_gen->add_option("--out", fleet_out, "sessions CSV")->required();
  fleet_gen->add_option("--day", fleet_day, "write historical day K instead of the realized day");
  fleet_gen->add_option("--da-prices-out", fleet_da_out, "also write the DA price CSV");
  fleet_gen->add_option("--rt-prices-out", fleet_rt_out, "also write the RT price CSV");
  fleet_gen->callback([&] {
    stage = "fleet-gen";
    action = [&] {
      const auto cfg = fleet_c.load();
      FleetSnapshot f;
      if (fleet_day) {
        const auto days = scenario_history(cfg);
        if (*fleet_day < 0 || *fleet_day >= static_cast<int>(days.size())) {
          throw Error(ErrorKind::kConfig, "--day outside the configured history");
        }
        f = days[static_cast<std::size_t>(*fleet_day)];
      } else {
        f = scenario_fleet(cfg);
      }
      write_stream(fleet_out, [&](std::ostream& o) { write_sessions_csv(o, f); });
      if (!fleet_da_out.empty() || !fleet_rt_out.empty()) {
        const auto p = scenario_prices(cfg);
        if (!fleet_da_out.empty()) write_stream(fleet_da_out, [&](std::ostream& o) { write_da_price_csv(o, p); });
        if (!fleet_rt_out.empty()) write_stream(fleet_rt_out, [&](std::ostream& o) { write_rt_price_csv(o, p); });
      }
      return 0;
    };
  });

  // ---- attack ----
  auto* attack = app.add_subcommand("attack", "charge-manipulation attacks");
  attack->require_subcommand(1);
  Common attack_c;
  std::string attack_sessions, attack_out, attack_plan_out, attack_plan_in;
  int attack_type = 1;
  auto* attack_inject = attack->add_subcommand("inject", "rewrite hacked EVCP requests");
  add_common(attack_inject, attack_c);
  attack_inject->add_option("--sessions", attack_sessions, "sessions CSV observed at t")->required();
  attack_inject->add_option("--type", attack_type, "attack type 1..6")->required();
  attack_inject->add_option("--out", attack_out, "manipulated sessions CSV")->required();
  attack_inject->add_option("--plan", attack_plan_out, "write the attack plan CSV");
  attack_inject->add_option("--plan-in", attack_plan_in, "use this attack plan instead of sampling one");
  attack_inject->callback([&] {
    stage = "attack-inject";
    action = [&] {
      const auto cfg = attack_c.load();
      const auto f = read_sessions_csv_file(attack_sessions, cfg.grid);
      const auto acfg = scenario_attack(cfg, parse_type(attack_type), f);
      AttackPlan plan;
      if (!attack_plan_in.empty()) {
        std::istringstream in(read_text(attack_plan_in));
        plan = read_plan_csv(in, added_rate(acfg));
      } else {
        plan = assign_targets(acfg, f.ids());
      }
      const auto out = inject(f, plan);
      write_stream(attack_out, [&](std::ostream& o) { write_sessions_csv(o, out); });
      if (!attack_plan_out.empty()) write_stream(attack_plan_out, [&](std::ostream& o) { write_plan_csv(o, plan); });
      return 0;
    };
  });

  // ---- market ----
  auto* market = app.add_subcommand("market", "two-settlement market");
  market->require_subcommand(1);
  Common market_c;
  std::string market_out, market_sessions, market_bids, market_da_prices, market_rt_prices, market_baseline;
  auto* market_da = market->add_subcommand("da", "Monte-Carlo day-ahead bids");
  add_common(market_da, market_c);
  market_da->add_option("--out", market_out, "DA bid JSON")->required();
  market_da->add_option("--da-prices", market_da_prices, "DA price CSV override");
  market_da->add_option("--rt-prices", market_rt_prices, "RT price CSV override");
  auto* market_settle = market->add_subcommand("settle", "settle a realized fleet against DA bids");
  add_common(market_settle, market_c);
  market_settle->add_option("--sessions", market_sessions, "realized sessions CSV")->required();
  market_settle->add_option("--da-bids", market_bids, "DA bid JSON (estimated from the config when absent)");
  market_settle->add_option("--da-prices", market_da_prices, "DA price CSV override");
  market_settle->add_option("--rt-prices", market_rt_prices, "RT price CSV override");
  market_settle->add_option("--baseline", market_baseline, "ledger JSON of the no-attack run");
  market_settle->add_option("--out", market_out, "ledger JSON")->required();
  const auto market_prices = [&](const ExperimentConfig& cfg) {
    if (market_da_prices.empty() != market_rt_prices.empty()) {
      throw Error(ErrorKind::kConfig, "--da-prices and --rt-prices must be given together");
    }
    if (market_da_prices.empty()) return scenario_prices(cfg);
    auto p = read_price_csv_files(market_da_prices, market_rt_prices);
    p.eenc_da = cfg.prices.model.eenc_da;
    p.eenc_rt = cfg.prices.model.eenc_rt;
    p.pen_rt = cfg.prices.model.pen_rt;
    return p;
  };
  market_da->callback([&] {
    stage = "market-da";
    action = [&] {
      const auto cfg = market_c.load();
      write_json(market_out, commitment_json(estimate_for(cfg, market_prices(cfg))));
      return 0;
    };
  });
  market_settle->callback([&] {
    stage = "market-settle";
    action = [&] {
      const auto cfg = market_c.load();
      const auto prices = market_prices(cfg);
      const auto f = read_sessions_csv_file(market_sessions, cfg.grid);
      const auto da = market_bids.empty() ? estimate_for(cfg, prices) : commitment_from_json(read_json(market_bids));
      const auto ledger = settle_rt(da, f, prices, RateCap{cfg.market.max_rate_kw});
      json j = to_json(ledger);
      j["format"] = "evcma-ledger";
      if (!market_baseline.empty()) {
        const auto base = read_json(market_baseline);
        double before = 0.0;
        try {
          before = base.at("costs").at("total").get<double>();
        } catch (const json::exception& e) {
          throw Error(ErrorKind::kParse, std::string("baseline ledger: ") + e.what());
        }
        const double after = total_cost(ledger);
        j["surcharge"] = {{"before", before},
                          {"after", after},
                          {"surcharge", after - before},
                          {"percent", before != 0.0 ? 100.0 * (after - before) / before : 0.0}};
      }
      write_json(market_out, j);
      return 0;
    };
  });

  // ---- detect ----
  auto* detect = app.add_subcommand("detect", "autoencoder detector");
  detect->require_subcommand(1);
  Common detect_c;
  std::string d_split = "train", d_out, d_val_out, d_train, d_val, d_model, d_data, d_arch = "cnn";
  std::optional<double> d_quantile;
  auto* d_dataset = detect->add_subcommand("dataset", "write seeded delta samples");
  add_common(d_dataset, detect_c);
  d_dataset->add_option("--split", d_split, "train | heldout | test")
      ->check(CLI::IsMember({"train", "heldout", "test"}));
  d_dataset->add_option("--out", d_out, "dataset JSON")->required();
  d_dataset->add_option("--validation-out", d_val_out, "calibration part of the train split");
  d_dataset->callback([&] {
    stage = "detect-dataset";
    action = [&] {
      const auto data = make_detection_data(detect_c.load());
      if (d_split == "train") {
        save_dataset(d_out, data.train);
        if (!d_val_out.empty()) save_dataset(d_val_out, data.validation);
      } else if (d_split == "heldout") {
        save_dataset(d_out, data.heldout);
      } else {
        save_dataset(d_out, data.test);
      }
      return 0;
    };
  });

  auto* d_trainc = detect->add_subcommand("train", "fit scaler and autoencoder on normal samples");
  add_common(d_trainc, detect_c);
  d_trainc->add_option("--train", d_train, "training dataset JSON")->required();
  d_trainc->add_option("--validation", d_val, "validation dataset JSON");
  d_trainc->add_option("--arch", d_arch, "cnn | mlp")->check(CLI::IsMember({"cnn", "mlp"}));
  d_trainc->add_option("--out", d_out, "model JSON")->required();
  d_trainc->callback([&] {
    stage = "detect-train";
    action = [&] {
      const auto cfg = detect_c.load();
      const auto arch = architecture_from_string(d_arch);
      const auto train_raw = load_dataset(d_train);
      DetectorState st;
      st.scaler = Scaler::fit(train_raw);
      std::vector<NormalizedBatch> train, val;
      for (const auto& d : train_raw) train.push_back(normalize_reshape(d, st.scaler));
      if (!d_val.empty()) {
        for (const auto& d : load_dataset(d_val)) val.push_back(normalize_reshape(d, st.scaler));
      }
      st.model = initial_detector_model(cfg, arch);
      if (cfg.detector) st.quantile = cfg.detector->quantile;
      const auto hist = train_autoencoder(st.model, train, val, detector_train_config(cfg, arch));
      save_detector(d_out, st);
      std::cout << "validation loss " << hist.initial_validation_loss << " -> "
                << (hist.validation_loss.empty() ? hist.initial_validation_loss : hist.validation_loss.back())
                << "\n";
      return 0;
    };
  });

  auto* d_cal = detect->add_subcommand("calibrate", "set T_r from validation normals");
  d_cal->add_option("--model", d_model, "model JSON")->required();
  d_cal->add_option("--data", d_data, "validation dataset JSON")->required();
  d_cal->add_option("--quantile", d_quantile, "override the model's quantile");
  d_cal->add_option("--out", d_out, "calibrated model JSON")->required();
  d_cal->callback([&] {
    stage = "detect-calibrate";
    action = [&] {
      auto st = load_detector(d_model);
      if (d_quantile) st.quantile = *d_quantile;
      std::vector<double> losses;
      for (const auto& d : load_dataset(d_data)) {
        losses.push_back(sample_loss(st.model, normalize_reshape(d, st.scaler)));
      }
      st.threshold = calibrate_threshold(losses, st.quantile);
      st.calibrated = true;
      save_detector(d_out, st);
      std::cout << "threshold " << st.threshold << "\n";
      return 0;
    };
  });

  auto* d_score = detect->add_subcommand("score", "per-sample loss and verdict");
  d_score->add_option("--model", d_model, "calibrated model JSON")->required();
  d_score->add_option("--data", d_data, "dataset JSON")->required();
  d_score->add_option("--out", d_out, "scores JSON")->required();
  d_score->callback([&] {
    stage = "detect-score";
    action = [&] {
      const auto st = load_detector(d_model);
      json rows = json::array();
      const auto samples = load_dataset(d_data);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto v = classify(st, samples[i]);
        rows.push_back({{"index", i},
                        {"loss", v.loss},
                        {"anomaly", v.anomaly},
                        {"label", samples[i].label == SampleLabel::kAttack ? "attack" : "normal"}});
      }
      write_json(d_out, {{"format", "evcma-scores"}, {"threshold", st.threshold}, {"scores", rows}});
      return 0;
    };
  });

  auto* d_eval = detect->add_subcommand("eval", "confusion counts and metrics");
  d_eval->add_option("--model", d_model, "calibrated model JSON")->required();
  d_eval->add_option("--data", d_data, "labelled dataset JSON")->required();
  d_eval->add_option("--out", d_out, "metrics JSON")->required();
  d_eval->callback([&] {
    stage = "detect-eval";
    action = [&] {
      write_json(d_out, metrics_by_group(load_detector(d_model), load_dataset(d_data)));
      return 0;
    };
  });

  // ---- ocpp ----
  auto* ocpp = app.add_subcommand("ocpp", "OCPP-J frames");
  ocpp->require_subcommand(1);
  std::string o_in, o_out, o_start, o_end;
  std::optional<double> o_kwh, o_acr;
  std::optional<int> o_type;
  auto* o_round = ocpp->add_subcommand("roundtrip", "decode and re-encode frames, report differences");
  o_round->add_option("--in", o_in, "frame file or directory of *.json frames")->required()->check(CLI::ExistingPath);
  o_round->add_option("--out", o_out, "directory for canonical re-encodings");
  o_round->callback([&] {
    stage = "ocpp-roundtrip";
    action = [&] {
      int mismatches = 0;
      for (const auto& path : frame_files(o_in)) {
        const auto text = read_text(path.string());
        const auto canon = encode(decode(text)) + "\n";
        const bool same = canon == text;
        mismatches += same ? 0 : 1;
        std::cout << (same ? "same " : "diff ") << path.filename().string() << "\n";
        if (!o_out.empty()) write_text((fs::path(o_out) / path.filename()).string(), canon);
      }
      return mismatches ? kExitMismatch : 0;
    };
  });
  auto* o_mitm = ocpp->add_subcommand("mitm", "rewrite the charging settings of one frame");
  o_mitm->add_option("--in", o_in, "frame file")->required()->check(CLI::ExistingFile);
  o_mitm->add_option("--out", o_out, "rewritten frame file")->required();
  o_mitm->add_option("--type", o_type, "apply attack rewrite 1..3 with --acr");
  o_mitm->add_option("--acr", o_acr, "added charging rate (kW)");
  o_mitm->add_option("--start", o_start, "manipulated start HH:MM");
  o_mitm->add_option("--end", o_end, "manipulated end HH:MM");
  o_mitm->add_option("--kwh", o_kwh, "manipulated demand (kWh)");
  o_mitm->callback([&] {
    stage = "ocpp-mitm";
    action = [&] {
      const SlotGrid grid;
      const auto frame = decode(read_text(o_in));
      const auto req = to_request(frame, grid);
      ManipulatedRequest m;
      if (o_type) {
        if (*o_type < 1 || *o_type > 3 || !o_acr) {
          throw Error(ErrorKind::kConfig, "--type must be 1..3 and needs --acr");
        }
        m = apply_manipulation(static_cast<Manipulation>(*o_type), req, *o_acr, grid);
      } else {
        m.request = req;
        if (!o_start.empty()) m.request.start_slot = time_to_slot(o_start, grid);
        if (!o_end.empty()) m.request.end_slot = time_to_slot(o_end, grid);
        if (o_kwh) m.request.demand_kwh = *o_kwh;
      }
      write_text(o_out, encode(mitm_transform(frame, m, grid)) + "\n");
      return 0;
    };
  });

  // ---- experiment ----
  auto* experiment = app.add_subcommand("experiment", "end-to-end runs");
  experiment->require_subcommand(1);
  Common exp_c;
  std::string exp_out_dir;
  auto* exp_run = experiment->add_subcommand("run", "fleet -> DA -> RT (before/after) -> detection");
  add_common(exp_run, exp_c);
  exp_run->add_option("--out-dir", exp_out_dir, "directory for report.json and timings.json")->required();
  exp_run->callback([&] {
    stage = "experiment-run";
    action = [&] {
      const auto cfg = exp_c.load();
      StageTimings timings;
      const auto report = run_experiment(cfg, &timings);
      write_json((fs::path(exp_out_dir) / "report.json").string(), report);
      write_json((fs::path(exp_out_dir) / "timings.json").string(), timings.to_json());
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << kConfigSchema;
    return kExitUsage;
  }

  try {
    return action ? action() : kExitUsage;
  } catch (const Error& e) {
    const std::string where = e.stage().empty() ? stage : stage + "/" + e.stage();
    std::cerr << "evcma: error [" << where << "] (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "evcma: error [" << stage << "]: " << e.what() << "\n";
    return 1;
  }
}
