#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "json_io.hpp"
#include "mixce/corpus.hpp"
#include "mixce/metrics.hpp"
#include "mixce/model.hpp"
#include "mixce/objectives.hpp"
#include "mixce/trainer.hpp"
#include "mixce/world.hpp"

namespace {

namespace fs = std::filesystem;
using mixce::detail::json;

// Flag-combination problems CLI11 cannot express declaratively; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// MIXCE_SEED supplies the seed when the flag (or config key) is omitted.
std::uint64_t env_seed_or(std::uint64_t fallback) {
  const char* env = std::getenv("MIXCE_SEED");
  if (env == nullptr || *env == '\0') return fallback;
  try {
    std::size_t pos = 0;
    const unsigned long long value = std::stoull(env, &pos);
    if (env[pos] != '\0') throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw UsageError(std::string("MIXCE_SEED is not an unsigned integer: ") +
                     env);
  }
}

struct ExperimentConfig {
  mixce::TrainConfig train;
  fs::path train_data;
  fs::path valid_data;
  fs::path world;  // empty when the config names no gold world
  std::string init_label;

  static ExperimentConfig load(const fs::path& path);
};

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  const json j = mixce::detail::read_json_file(path);
  mixce::detail::reject_unknown_keys(
      j,
      {"format", "objective", "eta", "mc_samples", "tau", "learning_rate",
       "max_epochs", "patience", "batch_size", "seed", "hidden_dim",
       "dropout_rate", "max_len", "train_data", "valid_data", "world",
       "init_label"},
      "experiment config");
  if (j.value("format", std::string()) != "mixce-config/1") {
    throw std::runtime_error(path.string() +
                             ": expected \"format\": \"mixce-config/1\"");
  }

  ExperimentConfig cfg;
  cfg.train.objective.kind = mixce::objective_kind_from_string(
      j.at("objective").get<std::string>());
  cfg.train.objective.eta = j.value("eta", cfg.train.objective.eta);
  cfg.train.objective.mc_samples =
      j.value("mc_samples", cfg.train.objective.mc_samples);
  cfg.train.objective.tau = j.value("tau", cfg.train.objective.tau);
  cfg.train.learning_rate = j.value("learning_rate", cfg.train.learning_rate);
  cfg.train.max_epochs = j.value("max_epochs", cfg.train.max_epochs);
  cfg.train.patience = j.value("patience", cfg.train.patience);
  cfg.train.batch_size = j.value("batch_size", cfg.train.batch_size);
  cfg.train.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>()
                                      : env_seed_or(0);
  cfg.train.hidden_dim = j.value("hidden_dim", cfg.train.hidden_dim);
  cfg.train.dropout_rate = j.value("dropout_rate", cfg.train.dropout_rate);
  cfg.train.max_len = j.value("max_len", cfg.train.max_len);
  cfg.train.validate();

  // Relative paths are relative to the config file, not the working dir.
  const fs::path base =
      path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto resolve = [&base](const std::string& rel) {
    const fs::path p(rel);
    return p.is_absolute() ? p : base / p;
  };
  cfg.train_data = resolve(j.at("train_data").get<std::string>());
  cfg.valid_data = resolve(j.at("valid_data").get<std::string>());
  if (j.contains("world")) {
    cfg.world = resolve(j.at("world").get<std::string>());
  }
  cfg.init_label = j.value("init_label", std::string());
  return cfg;
}

std::vector<double> parse_eta_list(const std::string& csv) {
  std::vector<double> etas;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const double eta = std::stod(item, &pos);
      if (pos != item.size()) throw std::invalid_argument("trailing text");
      if (!(eta >= 0.0 && eta <= 1.0)) {
        throw std::invalid_argument("outside [0, 1]");
      }
      etas.push_back(eta);
    } catch (const std::exception&) {
      throw UsageError("--etas: bad value \"" + item + "\"");
    }
  }
  if (etas.empty()) throw UsageError("--etas: empty list");
  return etas;
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", value);
  return buf;
}

// ---------------------------------------------------------------- world gen

struct WorldGenOpts {
  std::size_t vocab = 0;
  std::string init = "random";
  double zero_frac = 0.0;
  double alpha = 0.5;
  std::string counts;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

void run_world_gen(const WorldGenOpts& o) {
  const std::uint64_t seed = o.seed_given ? o.seed : env_seed_or(0);
  mixce::BigramWorld world = [&] {
    if (o.init == "random") {
      if (o.vocab == 0) {
        throw UsageError("world gen --init random requires --vocab");
      }
      return mixce::BigramWorld::init_random(o.vocab, o.zero_frac, o.alpha,
                                             mixce::SeedStream(seed));
    }
    if (o.counts.empty()) {
      throw UsageError("world gen --init counts requires --counts");
    }
    const mixce::Dataset ds = mixce::load_dataset(o.counts);
    if (o.vocab != 0 && o.vocab != ds.vocab_size) {
      throw UsageError("--vocab disagrees with the counts dataset (" +
                       std::to_string(ds.vocab_size) + ")");
    }
    return mixce::BigramWorld::init_from_counts(
        mixce::count_bigrams(ds, ds.vocab_size));
  }();
  if (!world.check_tight()) {
    throw std::runtime_error("generated world is not tight");
  }
  world.save(o.out);
  std::cout << "wrote " << o.out << " (vocab " << world.vocab_size() << ")\n";
}

// -------------------------------------------------------------- data sample

struct DataSampleOpts {
  std::string world;
  std::size_t train = 50000;
  std::size_t valid = 5000;
  std::size_t max_len = 500;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

void run_data_sample(const DataSampleOpts& o) {
  const std::uint64_t seed = o.seed_given ? o.seed : env_seed_or(0);
  const mixce::BigramWorld world = mixce::BigramWorld::load(o.world);
  if (o.train == 0) {
    std::cerr << "warning: --train 0 writes an empty training file\n";
  }
  fs::create_directories(o.out);
  const mixce::SeedStream root(seed);
  auto write_split = [&](const char* name, std::size_t count) {
    mixce::SeedStream stream = root.derive(name);
    const mixce::Dataset ds =
        mixce::sample_dataset(world, count, o.max_len, stream);
    const fs::path path = fs::path(o.out) / (std::string(name) + ".txt");
    mixce::save_dataset(ds, path);
    std::cout << "wrote " << path.string() << " (" << count << " sequences)\n";
  };
  write_split("train", o.train);
  write_split("valid", o.valid);
}

// -------------------------------------------------------------------- train

struct TrainOpts {
  std::string config;
  std::string out;
  bool progress = false;
};

void run_train(const TrainOpts& o) {
  const ExperimentConfig cfg = ExperimentConfig::load(o.config);
  const mixce::Dataset train_set = mixce::load_dataset(cfg.train_data);
  const mixce::Dataset valid_set = mixce::load_dataset(cfg.valid_data);
  std::optional<mixce::BigramWorld> world;
  if (!cfg.world.empty()) world = mixce::BigramWorld::load(cfg.world);

  if (o.progress) {
    std::cout << "objective " << mixce::to_string(cfg.train.objective.kind)
              << " eta " << cfg.train.objective.eta << " seed "
              << cfg.train.seed << " (" << train_set.sequences.size()
              << " train / " << valid_set.sequences.size() << " valid)\n";
  }
  const auto on_epoch = [](const mixce::EpochStats& e) {
    std::cout << "epoch " << e.epoch << " train " << e.train_loss << " val "
              << e.val_loss << "\n"
              << std::flush;
  };
  const mixce::TrainResult result =
      mixce::train(cfg.train, world ? &*world : nullptr, train_set, valid_set,
                   on_epoch);
  std::cout << "best epoch " << result.checkpoint.epoch << " val "
            << result.checkpoint.val_loss << "\n";

  if (!o.out.empty()) {
    fs::create_directories(o.out);
    result.checkpoint.save(fs::path(o.out) / "checkpoint.json");
    mixce::detail::write_text_file(fs::path(o.out) / "trace.json",
                                   result.trace_json());
    if (world) {
      mixce::MetricReport report = mixce::evaluate_model(
          result.checkpoint.model, *world, valid_set.sequences);
      report.objective = mixce::to_string(cfg.train.objective.kind);
      report.eta = cfg.train.objective.eta;
      report.seed = cfg.train.seed;
      report.init = cfg.init_label;
      mixce::detail::write_text_file(fs::path(o.out) / "metrics.json",
                                     report.to_json_string());
    }
    std::cout << "wrote " << o.out << "\n";
  }
}

// -------------------------------------------------------------------- sweep

struct SweepOpts {
  std::string config;
  std::string etas;
  std::size_t seeds = 1;
  std::size_t jobs = 1;
  bool force = false;
  bool progress = false;
  std::string out;
};

void run_sweep(const SweepOpts& o) {
  const std::vector<double> etas = parse_eta_list(o.etas);
  if (o.seeds == 0) throw UsageError("--seeds must be at least 1");
  const ExperimentConfig cfg = ExperimentConfig::load(o.config);
  if (cfg.world.empty()) {
    throw std::runtime_error(
        "sweep needs a config with a \"world\" entry — metrics compare "
        "against the gold transition matrix");
  }
  const mixce::BigramWorld world = mixce::BigramWorld::load(cfg.world);
  const mixce::Dataset train_set = mixce::load_dataset(cfg.train_data);
  const mixce::Dataset valid_set = mixce::load_dataset(cfg.valid_data);

  mixce::SweepOptions options;
  options.run_dir = o.out;
  options.force = o.force;
  options.jobs = o.jobs;
  options.init_label = cfg.init_label;
  options.log = [](const std::string& line) {
    std::cout << line << "\n" << std::flush;
  };
  if (o.progress) {
    options.on_epoch = [](const std::string& cell,
                          const mixce::EpochStats& e) {
      std::cout << cell << " epoch " << e.epoch << " train " << e.train_loss
                << " val " << e.val_loss << "\n"
                << std::flush;
    };
  }

  const mixce::SweepResult result = mixce::sweep_grid(
      cfg.train, etas, o.seeds, world, train_set, valid_set, options);

  std::cout << "\n| eta | cells | avg. js | avg. 0s |\n";
  std::cout << "|----:|------:|--------:|--------:|\n";
  for (const mixce::EtaAggregate& agg : result.aggregates) {
    std::size_t ok = 0;
    for (const mixce::SweepCell& cell : result.cells) {
      if (cell.eta == agg.eta && cell.ok()) ++ok;
    }
    std::cout << "| " << agg.eta << " | " << ok << "/" << o.seeds << " | ";
    if (agg.complete) {
      std::cout << format_metric(agg.js_mean) << " ± "
                << format_metric(agg.js_stddev) << " | "
                << format_metric(agg.zeros_mean) << " ± "
                << format_metric(agg.zeros_stddev) << " |\n";
    } else {
      std::cout << "— | — |\n";
    }
  }
  if (result.has_best) {
    std::cout << "best eta: " << result.best_eta << "\n";
  }

  std::size_t failed = 0;
  for (const mixce::SweepCell& cell : result.cells) {
    if (!cell.ok()) {
      ++failed;
      std::cout << "failed: cell eta=" << cell.eta << " seed=" << cell.seed
                << ": " << cell.error << "\n";
    }
  }
  if (failed == result.cells.size()) {
    throw std::runtime_error("all sweep cells failed");
  }
}

// --------------------------------------------------------------------- eval

struct EvalOpts {
  std::string world;
  std::string checkpoint;
  std::string data;
  std::string out;
};

void run_eval(const EvalOpts& o) {
  const mixce::BigramWorld world = mixce::BigramWorld::load(o.world);
  const std::string text = mixce::detail::read_text_file(o.checkpoint);
  const json j = json::parse(text);
  const std::string format = j.value("format", std::string());

  std::optional<mixce::Dataset> data;
  if (!o.data.empty()) data = mixce::load_dataset(o.data);
  const std::span<const mixce::TokenSequence> seqs =
      data ? std::span<const mixce::TokenSequence>(data->sequences)
           : std::span<const mixce::TokenSequence>();

  mixce::MetricReport report;
  if (format == "mixce-ckpt/1") {
    const mixce::Checkpoint ck = mixce::Checkpoint::from_json_string(text);
    report = mixce::evaluate_model(ck.model, world, seqs);
    report.init = "checkpoint";
  } else if (format == "mixce-world/1") {
    // A world file passed as the "model": score it like a perfect table.
    const mixce::BigramWorld as_model = mixce::BigramWorld::from_json_string(text);
    if (as_model.vocab_size() != world.vocab_size()) {
      throw std::runtime_error("eval: world/checkpoint vocab mismatch");
    }
    report.avg_js = mixce::avg_js(world.transition(), as_model.transition());
    report.avg_0s = mixce::avg_0s(world.transition(), as_model.transition());
    report.vocab_size = world.vocab_size();
    if (!seqs.empty()) {
      std::vector<double> lps;
      for (const mixce::TokenSequence& seq : seqs) {
        const mixce::SequenceScore sc = as_model.log_prob(seq);
        lps.insert(lps.end(), sc.per_token.begin(), sc.per_token.end());
      }
      report.perplexity = mixce::perplexity(lps);
    }
    report.init = "world";
  } else {
    throw std::runtime_error(o.checkpoint +
                             ": not a checkpoint or world file");
  }

  const std::string out_text = report.to_json_string();
  std::cout << out_text;
  if (!o.out.empty()) mixce::detail::write_text_file(o.out, out_text);
}

// ------------------------------------------------------------------- report

struct ReportOpts {
  std::string runs_dir;
  std::string out;
};

void run_report(const ReportOpts& o) {
  if (!fs::is_directory(o.runs_dir)) {
    throw std::runtime_error("no runs found");
  }
  std::vector<mixce::MetricReport> rows;
  std::vector<fs::path> files;
  for (const fs::directory_entry& entry :
       fs::recursive_directory_iterator(o.runs_dir)) {
    if (entry.is_regular_file() &&
        entry.path().filename() == "metrics.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& file : files) {
    try {
      rows.push_back(mixce::MetricReport::from_json_string(
          mixce::detail::read_text_file(file)));
    } catch (const std::exception& ex) {
      std::cerr << "warning: skipping " << file.string() << ": " << ex.what()
                << "\n";
    }
  }
  if (rows.empty()) throw std::runtime_error("no runs found");

  // Group by objective, eta descending within an objective.
  struct Key {
    std::string objective;
    double eta;
    bool operator<(const Key& other) const {
      if (objective != other.objective) return objective < other.objective;
      return eta > other.eta;
    }
  };
  struct Group {
    std::vector<double> js, zeros;
  };
  std::map<Key, Group> groups;
  for (const mixce::MetricReport& row : rows) {
    Group& g = groups[{row.objective, row.eta}];
    g.js.push_back(row.avg_js);
    g.zeros.push_back(row.avg_0s);
  }
  const auto mean_sd = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd =
        xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1))
                      : 0.0;
    return std::pair<double, double>(mean, sd);
  };

  std::ostringstream md;
  md << "# Run metrics\n\n";
  md << "| objective | eta | runs | avg. js | avg. 0s |\n";
  md << "|-----------|----:|-----:|--------:|--------:|\n";
  json out_rows = json::array();
  for (const auto& [key, group] : groups) {
    const auto [js_mean, js_sd] = mean_sd(group.js);
    const auto [zeros_mean, zeros_sd] = mean_sd(group.zeros);
    md << "| " << key.objective << " | " << key.eta << " | "
       << group.js.size() << " | " << format_metric(js_mean) << " ± "
       << format_metric(js_sd) << " | " << format_metric(zeros_mean) << " ± "
       << format_metric(zeros_sd) << " |\n";
    json row;
    row["objective"] = key.objective;
    row["eta"] = key.eta;
    row["runs"] = group.js.size();
    row["avg_js_mean"] = js_mean;
    row["avg_js_stddev"] = js_sd;
    row["avg_0s_mean"] = zeros_mean;
    row["avg_0s_stddev"] = zeros_sd;
    out_rows.push_back(row);
  }
  const std::string markdown = md.str();
  std::cout << markdown;

  json out_json;
  out_json["format"] = "mixce-report/1";
  out_json["rows"] = out_rows;
  const fs::path out_dir = o.out.empty() ? fs::path(o.runs_dir) : fs::path(o.out);
  fs::create_directories(out_dir);
  mixce::detail::write_text_file(out_dir / "report.md", markdown);
  mixce::detail::write_text_file(out_dir / "report.json",
                                 out_json.dump(2) + "\n");
  std::cout << "wrote " << (out_dir / "report.md").string() << " and "
            << (out_dir / "report.json").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Generate bigram worlds, sample corpora, and train neural bigram "
      "models under divergence-based objectives"};
  app.require_subcommand(1);

  WorldGenOpts world_gen;
  CLI::App* world_cmd =
      app.add_subcommand("world", "Ground-truth world operations");
  world_cmd->require_subcommand(1);
  CLI::App* gen = world_cmd->add_subcommand("gen", "Generate a world file");
  gen->add_option("--vocab", world_gen.vocab,
                  "Vocabulary size including EOS");
  gen->add_option("--init", world_gen.init, "Initialization method")
      ->check(CLI::IsMember({"random", "counts"}));
  gen->add_option("--zero-frac", world_gen.zero_frac,
                  "Fraction of each row zeroed (random init)");
  gen->add_option("--alpha", world_gen.alpha,
                  "Dirichlet concentration (random init)");
  gen->add_option("--counts", world_gen.counts,
                  "Dataset file whose bigram counts define the rows");
  CLI::Option* gen_seed = gen->add_option("--seed", world_gen.seed, "RNG seed");
  gen->add_option("-o,--out", world_gen.out, "Output world JSON")->required();
  gen->callback([&world_gen, gen_seed] {
    world_gen.seed_given = gen_seed->count() > 0;
    run_world_gen(world_gen);
  });

  DataSampleOpts data_sample;
  CLI::App* data_cmd = app.add_subcommand("data", "Corpus operations");
  data_cmd->require_subcommand(1);
  CLI::App* sample =
      data_cmd->add_subcommand("sample", "Sample train/valid corpora");
  sample->add_option("--world", data_sample.world, "World JSON")->required();
  sample->add_option("--train", data_sample.train, "Training sequences");
  sample->add_option("--valid", data_sample.valid, "Validation sequences");
  sample->add_option("--max-len", data_sample.max_len,
                     "Truncate sequences at this many tokens");
  CLI::Option* sample_seed =
      sample->add_option("--seed", data_sample.seed, "RNG seed");
  sample->add_option("-o,--out", data_sample.out, "Output directory")
      ->required();
  sample->callback([&data_sample, sample_seed] {
    data_sample.seed_given = sample_seed->count() > 0;
    run_data_sample(data_sample);
  });

  TrainOpts train_opts;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train one model from an experiment config");
  train_cmd->add_option("config", train_opts.config, "Experiment config JSON")
      ->required();
  train_cmd->add_option("-o,--out", train_opts.out,
                        "Directory for checkpoint/trace/metrics");
  train_cmd->add_flag("--progress", train_opts.progress,
                      "Extra progress detail");
  train_cmd->callback([&train_opts] { run_train(train_opts); });

  SweepOpts sweep_opts;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "Train an (eta x seed) grid and aggregate metrics");
  sweep_cmd->add_option("config", sweep_opts.config, "Experiment config JSON")
      ->required();
  sweep_cmd->add_option("--etas", sweep_opts.etas, "Comma-separated eta grid")
      ->required();
  sweep_cmd->add_option("--seeds", sweep_opts.seeds,
                        "Seeds per eta (base seed from the config)");
  sweep_cmd->add_option("--jobs", sweep_opts.jobs, "Parallel cells");
  sweep_cmd->add_flag("--force", sweep_opts.force,
                      "Retrain cells even when metrics.json exists");
  sweep_cmd->add_flag("--progress", sweep_opts.progress,
                      "Per-epoch lines inside each cell");
  sweep_cmd->add_option("-o,--out", sweep_opts.out, "Run directory")
      ->required();
  sweep_cmd->callback([&sweep_opts] { run_sweep(sweep_opts); });

  EvalOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Score a checkpoint (or world file) against the gold world");
  eval_cmd->add_option("--world", eval_opts.world, "Gold world JSON")
      ->required();
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint,
                       "Checkpoint JSON (a world file also works)")
      ->required();
  eval_cmd->add_option("--data", eval_opts.data,
                       "Dataset for perplexity (optional)");
  eval_cmd->add_option("-o,--out", eval_opts.out, "Also write the JSON here");
  eval_cmd->callback([&eval_opts] { run_eval(eval_opts); });

  ReportOpts report_opts;
  CLI::App* report_cmd = app.add_subcommand(
      "report", "Aggregate metrics.json files under a runs directory");
  report_cmd->add_option("runs_dir", report_opts.runs_dir, "Runs directory")
      ->required();
  report_cmd->add_option("-o,--out", report_opts.out,
                         "Where to write report.md / report.json "
                         "(default: the runs directory)");
  report_cmd->callback([&report_opts] { run_report(report_opts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
