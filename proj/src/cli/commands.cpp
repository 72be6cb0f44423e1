#include "fedseries/cli/commands.hpp"

#include "fedseries/io/binary.hpp"
#include "fedseries/io/checkpoint.hpp"
#include "fedseries/numerics/parallel.hpp"
#include "fedseries/numerics/random.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace fedseries::cli {

namespace fs = std::filesystem;

namespace {

void replace_directory(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

std::vector<data::WindowedDataset> load_datasets(const ExperimentConfig& config,
                                                 const std::vector<std::string>& symbols) {
  const std::string expected = config.pipeline().hash();
  std::vector<data::WindowedDataset> out;
  for (const auto& s : symbols) {
    const fs::path dir = config.datasets_dir() / s;
    if (!fs::exists(dir / "manifest.json")) {
      throw data::DataError("no dataset for " + s + " in " + config.datasets_dir().string() + "; run ingest first");
    }
    data::WindowedDataset d = data::load_dataset(dir);
    if (d.config_hash != expected) {
      throw data::DataError("dataset for " + s + " was built with different pipeline settings; run ingest again");
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string optional_number(const std::optional<double>& v) {
  if (!v) return "";
  return nlohmann::json(*v).dump();
}

nlohmann::json checkpoint_meta(const ExperimentConfig& config, std::string kind,
                               const std::vector<std::string>& symbols) {
  return {{"kind", std::move(kind)},
          {"strategy", strategy_label(config.federation.strategy)},
          {"symbols", symbols},
          {"model", config.model.to_json()},
          {"pipeline_hash", config.pipeline().hash()},
          {"config_hash", config.hash()},
          {"seed", config.seed}};
}

}  // namespace

IngestResult cmd_ingest(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const std::vector<std::string> symbols = config.resolve_symbols();
  const data::PipelineConfig pipeline = config.pipeline();
  fs::create_directories(config.datasets_dir());

  std::vector<std::string> errors(symbols.size());
  std::vector<nlohmann::json> entries(symbols.size());
  parallel_for(symbols.size(), config.workers, [&](std::size_t i) {
    const fs::path csv = config.csv_path(symbols[i]);
    try {
      if (!fs::is_regular_file(csv)) throw data::DataError("file not found");
      data::ParseDiagnostics diag;
      data::RawSeries raw = data::parse_csv(csv, &diag);
      raw.symbol = symbols[i];
      const data::WindowedDataset d = data::prepare_dataset(raw, pipeline);
      const fs::path dir = config.datasets_dir() / symbols[i];
      replace_directory(dir);
      data::save_dataset(d, dir);
      entries[i] = {{"symbol", symbols[i]},
                    {"rows", raw.size()},
                    {"rejected_lines", diag.rejected_lines},
                    {"windows",
                     {{"train", d.count(data::Split::kTrain)},
                      {"validation", d.count(data::Split::kValidation)},
                      {"test", d.count(data::Split::kTest)}}}};
    } catch (const std::exception& e) {
      errors[i] = csv.string() + ": " + e.what();
    }
  });

  IngestResult result;
  nlohmann::json manifest{{"pipeline", {{"smooth_window", pipeline.smooth_window},
                                        {"seq_len", pipeline.seq_len},
                                        {"horizon", pipeline.horizon}}},
                          {"pipeline_hash", pipeline.hash()},
                          {"datasets", nlohmann::json::array()}};
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (!errors[i].empty()) {
      result.failed.push_back(errors[i]);
      fs::remove_all(config.datasets_dir() / symbols[i]);
      continue;
    }
    result.written.push_back(symbols[i]);
    manifest["datasets"].push_back(entries[i]);
    const auto& w = entries[i]["windows"];
    log << "ingested " << symbols[i] << ": " << entries[i]["rows"] << " rows, windows train/validation/test "
        << w["train"] << '/' << w["validation"] << '/' << w["test"];
    if (!entries[i]["rejected_lines"].empty()) log << ", " << entries[i]["rejected_lines"].size() << " lines skipped";
    log << '\n';
  }
  io::write_json(config.datasets_dir() / "manifest.json", manifest);
  return result;
}

TrainResult cmd_train(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const std::vector<std::string> symbols = config.resolve_symbols();
  const fed::FedConfig fc = config.fed_config();
  std::vector<data::WindowedDataset> datasets = load_datasets(config, symbols);
  for (const auto& d : datasets) {
    if (d.seq_len != config.model.seq_len) throw data::DataError(d.symbol + ": dataset window length differs from model");
  }

  const model::Params init = model::init_params(config.model, derive_seed(config.seed, {fnv1a64("init")}));
  std::vector<fed::ClientState> clients;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    clients.push_back(fed::make_client(symbols[i], std::move(datasets[i]), init,
                                       fed::client_seed(config.seed, symbols[i]), fc.adam));
  }

  TrainResult result;
  result.run_dir = config.runs_dir() / fed::strategy_name(fc.strategy);
  replace_directory(result.run_dir);
  std::string validation = "round,client,validation_loss\n";

  if (fc.strategy == fed::Strategy::kSolo) {
    fed::SoloValidationLog vlog;
    const std::vector<model::Params> models = fed::run_solo(clients, config.model, fc, &vlog);
    for (std::size_t i = 0; i < clients.size(); ++i) {
      const fs::path dir = result.run_dir / clients[i].client_id;
      io::save_params(models[i], dir, checkpoint_meta(config, "transformer", {clients[i].client_id}));
      result.checkpoints.push_back(dir);
    }
    validation = "epoch,client,validation_loss\n";
    for (int e = 0; e < fc.solo_epochs; ++e) {
      for (std::size_t i = 0; i < clients.size(); ++i) {
        validation += std::to_string(e + 1) + ',' + clients[i].client_id + ',' + optional_number(vlog[i][e]) + '\n';
      }
    }
    log << "trained " << clients.size() << " SOLO models for " << fc.solo_epochs << " epochs\n";
  } else {
    const fed::FederationResult r = fed::run_federation(clients, config.model, fc, init);
    const fs::path dir = result.run_dir / "global";
    io::save_params(r.global, dir, checkpoint_meta(config, "transformer", symbols));
    result.checkpoints.push_back(dir);
    io::write_text(result.run_dir / "trace.jsonl", r.trace.to_jsonl());
    for (const auto& rec : r.trace.rounds) {
      for (std::size_t k = 0; k < rec.clients.size(); ++k) {
        validation +=
            std::to_string(rec.round) + ',' + rec.clients[k] + ',' + optional_number(rec.validation_loss[k]) + '\n';
      }
    }
    log << "trained " << strategy_label(fc.strategy) << " over " << clients.size() << " clients for " << fc.rounds
        << " rounds\n";
  }
  io::write_text(result.run_dir / "validation_log.csv", validation);
  io::write_json(result.run_dir / "config.json", {{"settings", config.result_settings()}, {"config_hash", config.hash()}});
  return result;
}

void write_baseline_checkpoint(const fs::path& dir, BaselineKind kind, const ExperimentConfig& config) {
  const bool persistence = kind == BaselineKind::kPersistence;
  replace_directory(dir);
  io::save_params(model::Params{}, dir,
                  {{"kind", persistence ? "persistence" : "oracle"},
                   {"strategy", persistence ? "Persistence" : "Oracle"},
                   {"config_hash", config.hash()},
                   {"seed", config.seed}});
}

std::vector<metrics::EvalReport> cmd_evaluate(const ExperimentConfig& config, std::span<const fs::path> checkpoints,
                                              std::ostream& log) {
  config.validate();
  if (checkpoints.empty()) throw UsageError("evaluate needs at least one --checkpoint");
  const std::vector<std::string> symbols = config.resolve_symbols();

  // Checkpoint directories paired with the argument they came from.
  std::vector<std::pair<fs::path, std::size_t>> expanded;
  for (std::size_t arg = 0; arg < checkpoints.size(); ++arg) {
    const fs::path& c = checkpoints[arg];
    if (fs::exists(c / "manifest.json")) {
      expanded.emplace_back(c, arg);
      continue;
    }
    if (!fs::is_directory(c)) throw UsageError("checkpoint not found: " + c.string());
    std::vector<fs::path> inner;
    for (const auto& e : fs::directory_iterator(c)) {
      if (e.is_directory() && fs::exists(e.path() / "manifest.json")) inner.push_back(e.path());
    }
    if (inner.empty()) throw UsageError("no checkpoint in " + c.string());
    std::sort(inner.begin(), inner.end());
    for (auto& p : inner) expanded.emplace_back(std::move(p), arg);
  }

  const std::vector<data::WindowedDataset> datasets = load_datasets(config, symbols);
  std::vector<metrics::EvalReport> reports;
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<bool> used(checkpoints.size(), false);
  for (const auto& [path, arg] : expanded) {
    const io::LoadedParams ckpt = io::load_params(path);
    const nlohmann::json& meta = ckpt.meta;
    const std::string kind = meta.value("kind", "");
    const std::string strategy = meta.value("strategy", "");
    if (strategy.empty() || strategy.find_first_of("/\\") != std::string::npos) {
      throw io::FormatError(path.string() + ": checkpoint has no usable strategy name");
    }

    metrics::Forecaster forecaster;
    if (kind == "persistence") {
      forecaster = metrics::persistence_forecast;
    } else if (kind == "oracle") {
      forecaster = metrics::perfect_forecast;
    } else if (kind == "transformer") {
      const model::ModelConfig mc = model::ModelConfig::from_json(meta.at("model"));
      if (!ckpt.params.same_layout(model::init_params(mc, 0))) {
        throw io::FormatError(path.string() + ": parameters do not match the stored model settings");
      }
      if (meta.value("pipeline_hash", "") != config.pipeline().hash()) {
        throw UsageError(path.string() + ": checkpoint was trained on datasets with different pipeline settings");
      }
      forecaster = [mc, params = ckpt.params](const data::WindowedDataset& d, std::span<const Index> idx) {
        return model::predict(mc, params, d, idx);
      };
    } else {
      throw io::FormatError(path.string() + ": unknown checkpoint kind '" + kind + "'");
    }

    std::set<std::string> covered;
    if (meta.contains("symbols")) {
      for (const auto& s : meta.at("symbols")) covered.insert(s.get<std::string>());
    }
    const std::string hash = meta.value("config_hash", config.hash());
    const std::uint64_t seed = meta.value("seed", config.seed);
    for (const auto& d : datasets) {
      if (!covered.empty() && !covered.contains(d.symbol)) continue;
      if (!seen.insert({d.symbol, strategy}).second) {
        throw UsageError("two checkpoints evaluate " + d.symbol + " as " + strategy);
      }
      reports.push_back(metrics::build_report(forecaster, d, strategy, hash, seed));
      used[arg] = true;
    }
  }
  for (std::size_t arg = 0; arg < checkpoints.size(); ++arg) {
    if (!used[arg]) throw UsageError(checkpoints[arg].string() + ": covers none of the configured symbols");
  }

  std::stable_sort(reports.begin(), reports.end(),
                   [](const auto& a, const auto& b) { return a.symbol < b.symbol; });
  for (const auto& r : reports) {
    const fs::path dir = config.reports_dir() / r.strategy;
    fs::create_directories(dir);
    io::write_json(dir / (r.symbol + ".json"), r.to_json());
    const auto& t = r.at(data::Split::kTest).normalized;
    log << r.symbol << ' ' << r.strategy << ": test mse " << t.mse << ", mae " << t.mae << ", mape " << t.mape
        << "%\n";
  }
  io::write_text(config.reports_dir() / "comparison.csv", metrics::comparison_csv(reports));
  return reports;
}

std::vector<fs::path> cmd_export_plot(const fs::path& report, const fs::path& out_dir, std::ostream& log) {
  std::vector<fs::path> inputs;
  if (fs::is_regular_file(report)) {
    inputs.push_back(report);
  } else if (fs::is_directory(report)) {
    for (const auto& e : fs::directory_iterator(report)) {
      if (e.is_regular_file() && e.path().extension() == ".json") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  }
  if (inputs.empty()) throw UsageError("report not found: " + report.string());

  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& in : inputs) {
    metrics::EvalReport r;
    try {
      r = metrics::EvalReport::from_json(io::read_json(in));
    } catch (const nlohmann::json::exception& e) {
      throw io::FormatError(in.string() + ": not a report (" + e.what() + ")");
    }
    const fs::path out = out_dir / (r.symbol + "_" + r.strategy + ".csv");
    io::write_text(out, metrics::plot_csv(r));
    log << "wrote " << out.string() << '\n';
    written.push_back(out);
  }
  return written;
}

}  // namespace fedseries::cli
