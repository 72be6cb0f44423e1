#include "fedseries/cli/commands.hpp"

#include "fedseries/io/binary.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <optional>

namespace fedseries::cli {

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> data_dir;
  std::optional<std::string> output_dir;
  std::vector<std::string> symbols;
  std::optional<std::string> strategy;
  std::optional<int> rounds;
  std::optional<int> local_epochs;
  std::optional<int> solo_epochs;
  std::optional<Index> batch_size;
  std::optional<double> epsilon;
  std::optional<double> lr;
};

void add_common(CLI::App* cmd, std::string& config_path, Overrides& o) {
  cmd->add_option("--config", config_path, "Experiment JSON file")->required();
  cmd->add_option("--seed", o.seed, "Run seed (overrides FEDSERIES_SEED and the config)");
  cmd->add_option("--workers", o.workers, "Parallel clients or symbols")->check(CLI::PositiveNumber);
  cmd->add_option("--data-dir", o.data_dir, "Directory of <SYMBOL>.csv files");
  cmd->add_option("--output-dir", o.output_dir, "Artifact root");
  cmd->add_option("--symbols", o.symbols, "Symbols to use instead of the configured list")->delimiter(',');
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("FEDSERIES_SEED");
  if (!v || !*v) return std::nullopt;
  const std::string s(v);
  std::uint64_t seed = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw UsageError("FEDSERIES_SEED must be a non-negative integer, got '" + s + "'");
  }
  return seed;
}

ExperimentConfig resolve(const std::string& config_path, const Overrides& o) {
  ExperimentConfig c = ExperimentConfig::load(config_path);
  if (auto s = env_seed()) c.seed = *s;
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.data_dir) c.data_dir = *o.data_dir;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (!o.symbols.empty()) c.symbols = o.symbols;
  if (o.strategy) c.federation.strategy = fed::parse_strategy(*o.strategy);
  if (o.rounds) c.federation.rounds = *o.rounds;
  if (o.local_epochs) c.federation.local_epochs = *o.local_epochs;
  if (o.solo_epochs) c.federation.solo_epochs = *o.solo_epochs;
  if (o.batch_size) c.federation.batch_size = *o.batch_size;
  if (o.epsilon) c.federation.epsilon = *o.epsilon;
  if (o.lr) c.federation.adam.lr = *o.lr;
  c.validate();
  return c;
}

// 1 for anything the user can fix by changing input, 2 otherwise.
int exit_code_for(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const fed::ClientError& x) {
    return exit_code_for(x.cause());
  } catch (const UsageError&) {
    return 1;
  } catch (const data::DataError&) {
    return 1;
  } catch (const io::FormatError&) {
    return 1;
  } catch (const nlohmann::json::exception&) {
    return 1;
  } catch (const std::invalid_argument&) {
    return 1;
  } catch (const std::domain_error&) {
    return 1;
  } catch (const fs::filesystem_error&) {
    return 1;
  } catch (...) {
    return 2;
  }
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated stock-return forecasting experiments", "fedseries"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;
  auto* ingest = app.add_subcommand("ingest", "Parse CSVs into windowed datasets");
  add_common(ingest, config_path, o);

  auto* train = app.add_subcommand("train", "Train with SOLO, FedAvg or FedAtt");
  add_common(train, config_path, o);
  train->add_option("--strategy", o.strategy, "solo, fedavg or fedatt");
  train->add_option("--rounds", o.rounds, "Global rounds");
  train->add_option("--local-epochs", o.local_epochs, "Client epochs per round");
  train->add_option("--solo-epochs", o.solo_epochs, "Epochs for SOLO");
  train->add_option("--batch-size", o.batch_size, "Mini-batch size");
  train->add_option("--epsilon", o.epsilon, "FedAtt step size");
  train->add_option("--lr", o.lr, "Adam learning rate");

  std::vector<std::string> checkpoints;
  auto* evaluate = app.add_subcommand("evaluate", "Score checkpoints and write reports");
  add_common(evaluate, config_path, o);
  evaluate->add_option("--checkpoint", checkpoints, "Checkpoint directory (repeatable)")->required();

  std::string baseline_kind;
  std::string baseline_out;
  auto* baseline = app.add_subcommand("baseline", "Write a persistence or oracle checkpoint");
  add_common(baseline, config_path, o);
  baseline->add_option("--kind", baseline_kind, "persistence or oracle")
      ->required()
      ->check(CLI::IsMember({"persistence", "oracle"}));
  baseline->add_option("--out", baseline_out, "Checkpoint directory")->required();

  std::string report_path;
  std::string plot_out;
  auto* plot = app.add_subcommand("export-plot", "Write predicted-vs-actual CSVs from reports");
  plot->add_option("--report", report_path, "Report JSON or a directory of them")->required();
  plot->add_option("--out", plot_out, "Output directory")->required();

  std::vector<std::string> argv_store{"fedseries"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*ingest) {
      const IngestResult r = cmd_ingest(resolve(config_path, o), out);
      for (const auto& f : r.failed) err << "error: " << f << '\n';
      return r.failed.empty() ? 0 : 1;
    }
    if (*train) {
      cmd_train(resolve(config_path, o), out);
    } else if (*evaluate) {
      std::vector<fs::path> paths(checkpoints.begin(), checkpoints.end());
      cmd_evaluate(resolve(config_path, o), paths, out);
    } else if (*baseline) {
      write_baseline_checkpoint(baseline_out,
                                baseline_kind == "persistence" ? BaselineKind::kPersistence : BaselineKind::kOracle,
                                resolve(config_path, o));
    } else if (*plot) {
      cmd_export_plot(report_path, plot_out, out);
    }
    return 0;
  } catch (const std::exception& e) {
    const int code = exit_code_for(std::current_exception());
    err << (code == 2 ? "internal error: " : "error: ") << e.what() << '\n';
    return code;
  } catch (...) {
    err << "internal error: unknown exception\n";
    return 2;
  }
}

}  // namespace fedseries::cli
