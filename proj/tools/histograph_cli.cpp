// Command-line driver: dataset generation, training, evaluation, activation
// caching, frozen-head fine-tuning, and diagnostics, all reproducible from a
// seed plus a resolved-config JSON written next to every output.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hg/config.hpp"
#include "hg/dataset_io.hpp"
#include "hg/diagnostics.hpp"
#include "hg/synthetic.hpp"
#include "hg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string data;
  std::string out = "run";
  std::string config_file;
  std::string checkpoint;
  std::string cache;
  std::string pool;
  std::string backbone;
  std::string task;
  std::string mode;
  std::uint64_t seed = 0;
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::size_t heads = 0;
  std::size_t epochs = 0;
  std::size_t batch = 0;
  double lr = 0.0;
  double wd = -1.0;
};

void add_model_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file (flags win)");
  cmd->add_option("--pool", f.pool, "readout: histograph|mean|sum|max|jk");
  cmd->add_option("--backbone", f.backbone, "backbone: gcn|gin");
  cmd->add_option("--task", f.task, "task: graph|node|regress");
  cmd->add_option("--mode", f.mode, "training mode: e2e|ft|fullft");
  cmd->add_option("--layers", f.layers, "history length L");
  cmd->add_option("--hidden", f.hidden, "hidden width D");
  cmd->add_option("--heads", f.heads, "attention heads");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch", f.batch, "batch size");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--wd", f.wd, "weight decay");
  cmd->add_option("--seed", f.seed, "random seed");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw hg::IngestError("cannot open " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) {
    throw hg::IngestError("cannot write " + path);
  }
  out << body;
}

/// Resolves the effective TrainConfig: defaults, then config file, then
/// explicitly passed flags.
hg::TrainConfig resolve_train_config(const CLI::App* cmd,
                                     const CommonFlags& f) {
  std::string base = hg::config_to_json(hg::TrainConfig{});
  if (!f.config_file.empty()) {
    base = hg::merge_config_json(base, read_file(f.config_file));
  }
  json overlay = json::object();
  auto passed = [cmd](const std::string& name) {
    return cmd->count(name) > 0;
  };
  if (passed("--pool")) overlay["readout"] = f.pool;
  if (passed("--backbone")) overlay["backbone.kind"] = f.backbone;
  if (passed("--task")) overlay["task"] = f.task;
  if (passed("--mode")) overlay["train.mode"] = f.mode;
  if (passed("--layers")) overlay["backbone.layers"] = f.layers;
  if (passed("--hidden")) overlay["backbone.hidden"] = f.hidden;
  if (passed("--heads")) overlay["pool.heads"] = f.heads;
  if (passed("--epochs")) overlay["train.epochs"] = f.epochs;
  if (passed("--batch")) overlay["train.batch"] = f.batch;
  if (passed("--lr")) overlay["train.lr"] = f.lr;
  if (passed("--wd")) overlay["train.wd"] = f.wd;
  if (passed("--seed")) overlay["train.seed"] = f.seed;
  hg::TrainConfig cfg =
      hg::config_from_json(hg::merge_config_json(base, overlay.dump()));
  cfg.canonicalize();
  return cfg;
}

void write_run_outputs(const std::string& prefix,
                       const hg::TrainOutput<float>& run) {
  hg::save_checkpoint(run.checkpoint, prefix + ".ckpt");
  write_file(prefix + ".metrics.csv", hg::metrics_csv(run.history));
  write_file(prefix + ".config.json", run.checkpoint.config_json);
  if (!run.history.empty() && !run.history.front().alpha.empty()) {
    hg::TrainConfig cfg = hg::config_from_json(run.checkpoint.config_json);
    auto series = hg::attention_trace(
        run, cfg.seed, hg::config_hash(run.checkpoint.config_json));
    write_file(prefix + ".attention.csv", hg::diagnostics_csv(series));
  }
}

int cmd_gen(const CLI::App* cmd, const CommonFlags& f, const std::string& kind,
            std::size_t n, double p, std::size_t count, double noise) {
  json resolved;
  if (!f.config_file.empty()) {
    resolved = json::parse(read_file(f.config_file));
  }
  auto pick = [&](const char* key, auto flag_value, bool flag_passed,
                  auto fallback) {
    using V = decltype(fallback);
    if (flag_passed) return static_cast<V>(flag_value);
    if (resolved.contains(key)) return resolved[key].get<V>();
    return fallback;
  };
  const std::string kind_name =
      pick("gen.kind", kind, cmd->count("--kind") > 0, std::string("barbell"));
  hg::SyntheticParams params;
  params.n = pick("gen.n", n, cmd->count("--n") > 0, std::size_t{8});
  params.p = pick("gen.p", p, cmd->count("--p") > 0, 0.3);
  params.count =
      pick("gen.count", count, cmd->count("--count") > 0, std::size_t{1});
  params.noise =
      pick("gen.noise", noise, cmd->count("--noise") > 0, 0.8);
  const std::uint64_t seed =
      pick("gen.seed", f.seed, cmd->count("--seed") > 0, std::uint64_t{1});

  auto graphs =
      hg::generate_synthetic(hg::parse_synthetic_kind(kind_name), params, seed);
  hg::save_jsonl(graphs, f.out);

  json out_cfg;
  out_cfg["gen.kind"] = kind_name;
  out_cfg["gen.n"] = params.n;
  out_cfg["gen.p"] = params.p;
  out_cfg["gen.count"] = params.count;
  out_cfg["gen.noise"] = params.noise;
  out_cfg["gen.seed"] = seed;
  write_file(f.out + ".config.json", out_cfg.dump());
  std::cout << "wrote " << graphs.size() << " graphs to " << f.out << "\n";
  return 0;
}

int cmd_train(const CLI::App* cmd, const CommonFlags& f) {
  hg::TrainConfig cfg = resolve_train_config(cmd, f);
  if (cfg.mode == hg::TrainMode::ft_frozen) {
    throw hg::ConfigError("train: use the ft subcommand for frozen-head runs");
  }
  auto dataset = hg::load_dataset(f.data);
  hg::TrainOutput<float> run;
  if (cfg.mode == hg::TrainMode::full_ft) {
    if (f.checkpoint.empty()) {
      throw hg::ConfigError("train: fullft mode needs --checkpoint");
    }
    auto base = hg::load_checkpoint<float>(f.checkpoint);
    run = hg::train<float>(dataset, cfg, &base.params);
  } else {
    run = hg::train<float>(dataset, cfg);
  }
  write_run_outputs(f.out, run);
  const auto& last = run.history.back();
  std::cout << "train done: epochs=" << run.history.size()
            << " train_loss=" << hg::format_double(last.train_loss)
            << " train_metric=" << hg::format_double(last.train_metric)
            << " val_metric=" << hg::format_double(last.val_metric) << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f) {
  auto dataset = hg::load_dataset(f.data);
  auto ckpt = hg::load_checkpoint<float>(f.checkpoint);
  auto metrics = hg::evaluate(dataset, ckpt);
  hg::TrainConfig cfg = hg::config_from_json(ckpt.config_json);

  std::ostringstream csv;
  csv << "metric,value\n";
  csv << "loss," << hg::format_double(metrics.loss) << "\n";
  if (cfg.task == hg::TaskKind::node_regress) {
    csv << "mse," << hg::format_double(metrics.mse) << "\n";
  } else {
    csv << "accuracy," << hg::format_double(metrics.accuracy) << "\n";
  }
  if (metrics.auc) {
    csv << "roc_auc," << hg::format_double(*metrics.auc) << "\n";
  }
  write_file(f.out + ".eval.csv", csv.str());
  write_file(f.out + ".config.json", ckpt.config_json);
  std::cout << csv.str();
  return 0;
}

int cmd_cache(const CommonFlags& f) {
  auto dataset = hg::load_dataset(f.data);
  auto ckpt = hg::load_checkpoint<float>(f.checkpoint);
  hg::cache_activations(dataset, ckpt, f.out);
  write_file(f.out + ".config.json", ckpt.config_json);
  std::cout << "cached " << dataset.size() << " graphs to " << f.out << "\n";
  return 0;
}

int cmd_ft(const CLI::App* cmd, const CommonFlags& f) {
  hg::TrainConfig cfg = resolve_train_config(cmd, f);
  auto cache = hg::read_activation_cache<float>(f.cache);
  auto run = hg::finetune_head(cache, cfg);
  write_run_outputs(f.out, run);
  const auto& last = run.history.back();
  std::cout << "ft done: epochs=" << run.history.size()
            << " train_metric=" << hg::format_double(last.train_metric)
            << " val_metric=" << hg::format_double(last.val_metric) << "\n";
  return 0;
}

int cmd_diagnose(const CLI::App* cmd, const CommonFlags& f) {
  hg::TrainConfig cfg = resolve_train_config(cmd, f);
  auto dataset = hg::load_dataset(f.data);
  auto run = hg::train<float>(dataset, cfg);
  const std::string hash = hg::config_hash(run.checkpoint.config_json);
  hg::TrainConfig final_cfg =
      hg::config_from_json(run.checkpoint.config_json);

  auto batch = hg::batch_graphs(dataset);
  auto hist = hg::forward_with_history(batch, run.checkpoint.params,
                                       final_cfg.backbone);

  std::vector<hg::DiagnosticSeries> dist_series;
  hg::DiagnosticSeries fd{"feature_distance", {}, {}, cfg.seed, hash};
  for (std::size_t l = 0; l < hist.layers(); ++l) {
    fd.x.push_back(static_cast<double>(l));
    fd.values.push_back(hg::feature_distance(hist, l));
  }
  dist_series.push_back(std::move(fd));
  if (final_cfg.readout == hg::ReadoutKind::histograph) {
    hg::PoolConfig node_pool = final_cfg.pool;
    node_pool.task_mode = hg::TaskMode::node;
    auto pooled = hg::histograph_forward(hist, run.checkpoint.params,
                                         node_pool);
    dist_series.push_back({"pooled_distance",
                           {0.0},
                           {hg::mean_pairwise_distance(
                               pooled, hist.node_graph_id, hist.num_graphs)},
                           cfg.seed,
                           hash});
  }
  write_file(f.out + ".feature_distance.csv",
             hg::diagnostics_csv(dist_series));

  hg::DiagnosticSeries drift{"embedding_drift", {}, {}, cfg.seed, hash};
  auto drift_values = hg::embedding_drift(hist);
  for (std::size_t l = 0; l < drift_values.size(); ++l) {
    drift.x.push_back(static_cast<double>(l));
    drift.values.push_back(drift_values[l]);
  }
  write_file(f.out + ".drift.csv", hg::diagnostics_csv({drift}));

  if (!run.history.empty() && !run.history.front().alpha.empty()) {
    write_file(f.out + ".attention.csv",
               hg::diagnostics_csv(hg::attention_trace(run, cfg.seed, hash)));
  }

  hg::DiagnosticSeries timing{"epoch_seconds", {}, {}, cfg.seed, hash};
  for (const auto& em : run.history) {
    timing.x.push_back(static_cast<double>(em.epoch));
    timing.values.push_back(em.seconds);
  }
  std::vector<hg::DiagnosticSeries> timing_series{timing};
  if (run.history.size() >= 6) {
    timing_series.push_back(
        {"epoch_seconds_median", {0.0}, {hg::epoch_timer(run)}, cfg.seed,
         hash});
  }
  write_file(f.out + ".timing.csv", hg::diagnostics_csv(timing_series));
  write_file(f.out + ".config.json", run.checkpoint.config_json);
  std::cout << "diagnostics written with prefix " << f.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"historical-activation graph pooling toolkit"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string gen_kind = "barbell";
  std::size_t gen_n = 8, gen_count = 1;
  double gen_p = 0.3, gen_noise = 0.8;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--kind", gen_kind, "barbell|bridge|community");
  gen->add_option("--n", gen_n, "clique / subgraph / community size");
  gen->add_option("--p", gen_p, "edge probability");
  gen->add_option("--count", gen_count, "number of graphs");
  gen->add_option("--noise", gen_noise, "feature noise sigma");
  gen->add_option("--seed", f.seed, "random seed");
  gen->add_option("--out", f.out, "output JSONL path")->required();
  gen->add_option("--config", f.config_file, "JSON config file (flags win)");

  CLI::App* train = app.add_subcommand("train", "train a model end to end");
  train->add_option("--data", f.data, "JSONL file or TU directory")
      ->required();
  train->add_option("--out", f.out, "output prefix");
  train->add_option("--checkpoint", f.checkpoint,
                    "base checkpoint (fullft mode)");
  add_model_flags(train, f);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--data", f.data, "JSONL file or TU directory")
      ->required();
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint path")
      ->required();
  eval->add_option("--out", f.out, "output prefix");

  CLI::App* cache = app.add_subcommand("cache",
                                       "record activation histories");
  cache->add_option("--data", f.data, "JSONL file or TU directory")
      ->required();
  cache->add_option("--checkpoint", f.checkpoint, "checkpoint path")
      ->required();
  cache->add_option("--out", f.out, "cache file path")->required();

  CLI::App* ft = app.add_subcommand("ft", "fine-tune a head on a cache");
  ft->add_option("--cache", f.cache, "activation cache path")->required();
  ft->add_option("--out", f.out, "output prefix");
  add_model_flags(ft, f);

  CLI::App* diagnose = app.add_subcommand(
      "diagnose", "train and emit distance/drift/attention/timing CSVs");
  diagnose->add_option("--data", f.data, "JSONL file or TU directory")
      ->required();
  diagnose->add_option("--out", f.out, "output prefix");
  add_model_flags(diagnose, f);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) {
      return cmd_gen(gen, f, gen_kind, gen_n, gen_p, gen_count, gen_noise);
    }
    if (train->parsed()) return cmd_train(train, f);
    if (eval->parsed()) return cmd_eval(f);
    if (cache->parsed()) return cmd_cache(f);
    if (ft->parsed()) return cmd_ft(ft, f);
    if (diagnose->parsed()) return cmd_diagnose(diagnose, f);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const hg::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const hg::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
