#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "herbs/config.hpp"
#include "herbs/eval.hpp"
#include "herbs/heatmap.hpp"
#include "herbs/plot.hpp"

namespace herbs {
namespace cli {

namespace fs = std::filesystem;

// failures surface as one machine-parsable line: E_<CODE>: message
struct CliError : std::runtime_error {
  std::string code;
  CliError(std::string c, const std::string& msg) : std::runtime_error(msg), code(std::move(c)) {}
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int64_t seed = -1;
  bool overwrite = false;
};

inline RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  try {
    if (!args.config_path.empty()) {
      if (!fs::exists(args.config_path))
        throw CliError("E_CONFIG", "config file not found: " + args.config_path);
      cfg = load_config_file(args.config_path);
    }
    for (const auto& kv : args.overrides) apply_config_line(cfg, kv);
    if (args.seed >= 0) apply_config_key(cfg, "seed", std::to_string(args.seed));
    return finalize(cfg);
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError("E_CONFIG", e.what());
  }
}

// refuse to reuse a populated output directory unless --overwrite was given
inline void prepare_out_dir(const CommonArgs& args, const RunConfig& cfg) {
  if (args.out_dir.empty()) throw CliError("E_USAGE", "--out is required");
  const fs::path marker = fs::path(args.out_dir) / "resolved_config.txt";
  if (fs::exists(marker) && !args.overwrite)
    throw CliError("E_EXISTS",
                   "output directory already holds a run (use --overwrite): " + args.out_dir);
  fs::create_directories(args.out_dir);
  std::ofstream os(marker);
  os << config_echo(cfg);
  if (!os) throw CliError("E_IO", "cannot write " + marker.string());
}

inline void write_metrics_log(const std::string& path, const std::vector<EpochRecord>& records) {
  std::ofstream os(path);
  if (!os) throw CliError("E_IO", "cannot write " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["loss_m"] = r.losses.loss_m;
    j["loss_d"] = r.losses.loss_d;
    j["loss_l"] = r.losses.loss_l;
    j["loss_r"] = r.losses.loss_r;
    j["loss_bs"] = r.losses.loss_bs;
    j["loss_herbs"] = r.losses.loss_herbs;
    j["temperature"] = r.temperature;
    j["lr"] = r.lr;
    j["optimizer_steps"] = r.optimizer_steps;
    os << j.dump() << "\n";
  }
}

struct LoadedRun {
  RunConfig cfg;
  std::unique_ptr<HerbsNet> net;
  SyntheticDataset dataset;
};

inline LoadedRun build_run(const RunConfig& cfg) {
  LoadedRun run;
  run.cfg = cfg;
  run.dataset = make_synthetic_dataset(cfg.data, cfg.data_seed);
  run.net = std::make_unique<HerbsNet>(cfg.model);
  return run;
}

inline LoadedRun load_from_checkpoint(const std::string& ckpt_path, const CommonArgs& args) {
  if (ckpt_path.empty()) throw CliError("E_NO_CKPT", "no checkpoint path given (--ckpt)");
  if (!fs::exists(ckpt_path)) throw CliError("E_NO_CKPT", "checkpoint not found: " + ckpt_path);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg;
  std::istringstream echo(ckpt.config_echo);
  std::string line;
  while (std::getline(echo, line)) apply_config_line(cfg, line);
  for (const auto& kv : args.overrides) apply_config_line(cfg, kv);
  cfg = finalize(cfg);
  LoadedRun run = build_run(cfg);
  apply_parameters(ckpt, run.net->params());
  return run;
}

inline int cmd_train(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  prepare_out_dir(args, cfg);
  LoadedRun run = build_run(cfg);
  Trainer trainer(*run.net, cfg.train);
  std::vector<EpochRecord> records = trainer.run(run.dataset.train);
  write_metrics_log((fs::path(args.out_dir) / "metrics.jsonl").string(), records);
  save_checkpoint((fs::path(args.out_dir) / "checkpoint.bin").string(),
                  trainer.make_checkpoint(config_echo(cfg)));
  EvalResult train_eval = evaluate(*run.net, run.dataset.train, cfg.train);
  EvalResult test_eval = evaluate(*run.net, run.dataset.test, cfg.train);
  nlohmann::json summary;
  summary["train_top1"] = train_eval.top1;
  summary["test_top1"] = test_eval.top1;
  summary["epochs"] = cfg.train.epochs;
  summary["parameters"] = run.net->params().total_count();
  std::ofstream os(fs::path(args.out_dir) / "summary.json");
  os << summary.dump(2) << "\n";
  std::cout << "train to " << args.out_dir << ": train_top1 " << train_eval.top1 << " test_top1 "
            << test_eval.top1 << "\n";
  return 0;
}

inline std::map<int, int> fine_to_generic_map(const SyntheticDataset& ds) {
  std::map<int, int> m;
  for (int f = 0; f < int(ds.classes()); ++f) m[f] = ds.generic_of(f);
  return m;
}

inline int cmd_eval(const CommonArgs& args, const std::string& ckpt_path,
                    const std::string& split) {
  LoadedRun run = load_from_checkpoint(ckpt_path, args);
  prepare_out_dir(args, run.cfg);
  const auto& samples = split == "train" ? run.dataset.train : run.dataset.test;
  EvalResult ev = evaluate(*run.net, samples, run.cfg.train);
  write_dump((fs::path(args.out_dir) / "dump.jsonl").string(), ev.records);

  std::vector<int> td, bu, labels;
  for (const auto& r : ev.records) {
    td.push_back(r.td_argmax);
    bu.push_back(r.bu_argmax);
    labels.push_back(r.label);
  }
  const double ft = false_true_rate(td, bu, labels);
  auto rows = generic_class_report(ev.records, fine_to_generic_map(run.dataset),
                                   run.cfg.generic_threshold);
  nlohmann::json rep;
  rep["split"] = split;
  rep["samples"] = ev.records.size();
  rep["top1"] = ev.top1;
  if (run.cfg.eval_topk > 1) rep["topk"] = top_k_accuracy(ev.records, run.cfg.eval_topk);
  rep["false_true_rate"] = ft;
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : rows)
    jrows.push_back({{"name", r.name}, {"num", r.num}, {"precision", r.precision}, {"fp", r.fp}});
  rep["generic_classes"] = jrows;
  std::ofstream js(fs::path(args.out_dir) / "report.json");
  js << rep.dump(2) << "\n";

  std::ofstream txt(fs::path(args.out_dir) / "report.txt");
  txt << "split: " << split << "\n";
  txt << "samples: " << ev.records.size() << "\n";
  char line[64];
  std::snprintf(line, sizeof(line), "top-1 accuracy: %.2f%%\n", ev.top1);
  txt << line;
  std::snprintf(line, sizeof(line), "false-true rate: %.4f\n", ft);
  txt << line;
  txt << "\n" << format_generic_report(rows);
  std::cout << "eval " << split << ": top1 " << ev.top1 << " ft-rate " << ft << "\n";
  return 0;
}

inline int cmd_visualize(const CommonArgs& args, const std::string& ckpt_path,
                         const std::string& source, int64_t count) {
  LoadedRun run = load_from_checkpoint(ckpt_path, args);
  prepare_out_dir(args, run.cfg);
  std::vector<HeatSource> sources;
  if (source == "both") {
    sources = {HeatSource::max_score, HeatSource::target_class};
  } else {
    sources = {heat_source_from_string(source)};
  }
  const auto& samples = run.dataset.test;
  const int64_t n = std::min<int64_t>(count, int64_t(samples.size()));
  for (int64_t i = 0; i < n; ++i) {
    ImageBatch one = assemble_batch(samples, {i}, Phase::test, run.cfg.train, 0);
    Tensor normalized = one.pixels.reshaped({3, run.cfg.train.input_size, run.cfg.train.input_size});
    // un-normalized copy for the overlay
    Tensor raw = normalized;
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t p = 0; p < raw.dim(1) * raw.dim(2); ++p)
        raw[c * raw.dim(1) * raw.dim(2) + p] =
            raw[c * raw.dim(1) * raw.dim(2) + p] * run.cfg.train.norm_std[c] +
            run.cfg.train.norm_mean[c];
    for (HeatSource src : sources) {
      HeatMap hm = render_heatmap(*run.net, normalized, src);
      export_heatmap(hm, raw, args.out_dir, samples[size_t(i)].id);
    }
  }
  std::cout << "visualize: wrote " << n * int64_t(sources.size()) << " heat maps to "
            << args.out_dir << "\n";
  return 0;
}

// finite-difference audit of the analytic gradients, grouped per module;
// distillation targets and selection indices are pinned at base values (the
// gradient is defined with both held constant)
inline int cmd_gradcheck(const CommonArgs& args, int64_t samples_per_module) {
  RunConfig cfg = resolve_config(args);
  prepare_out_dir(args, cfg);
  HerbsNet net(cfg.model);
  Rng drng = Rng::stream(cfg.train.seed, 0x6c, 1);
  ImageBatch batch;
  batch.pixels = Tensor::randn({2, 3, 32, 32}, drng, 0.5);
  batch.ids = {"g0", "g1"};
  std::vector<int> labels;
  for (int i = 0; i < 2; ++i) labels.push_back(int(drng.below(uint64_t(cfg.model.classes))));
  batch.labels = labels;

  ForwardOutput base = net.forward(batch, 2);
  ForwardFreeze freeze = ForwardFreeze::capture(base);
  auto loss = [&] { return net.forward(batch, 2, true, &freeze).loss_herbs; };

  const std::vector<std::pair<std::string, std::string>> groups = {
      {"backbone", "backbone/"}, {"neck", "neck/"}, {"heads", "head/"}, {"combiner", "combiner/"}};
  std::ofstream report(fs::path(args.out_dir) / "gradcheck.txt");
  double overall = 0.0;
  int64_t total_checked = 0;
  Rng pick = Rng::stream(cfg.train.seed, 0x6c, 2);
  for (const auto& [label, prefix] : groups) {
    std::vector<size_t> members;
    for (size_t i = 0; i < net.params().size(); ++i)
      if (net.params().name(i).rfind(prefix, 0) == 0) members.push_back(i);
    if (members.empty()) continue;
    double group_max = 0.0;
    std::string worst_param;
    for (int64_t s = 0; s < samples_per_module; ++s) {
      const size_t pi = members[pick.below(members.size())];
      Var p = net.params().var(pi);
      const int64_t coord = int64_t(pick.below(uint64_t(p.numel())));
      net.params().zero_grads();
      Var l = loss();
      backward(l);
      const double analytic = p.has_grad() ? p.grad_raw()[coord] : 0.0;
      const double orig = p.val()[coord];
      const double h = 1e-5;
      p.mutable_val()[coord] = orig + h;
      const double up = loss().val().item();
      p.mutable_val()[coord] = orig - h;
      const double down = loss().val().item();
      p.mutable_val()[coord] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
      ++total_checked;
      if (rel > group_max) {
        group_max = rel;
        worst_param = net.params().name(pi) + "[" + std::to_string(coord) + "]";
      }
    }
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s max_rel_err %.3e  worst %s\n", label.c_str(),
                  group_max, worst_param.c_str());
    report << line;
    std::cout << line;
    overall = std::max(overall, group_max);
  }
  char line[96];
  std::snprintf(line, sizeof(line), "overall    max_rel_err %.3e over %lld parameters\n", overall,
                (long long)total_checked);
  report << line;
  std::cout << line;
  if (overall >= 1e-4) throw CliError("E_GRADCHECK", "max relative error >= 1e-4");
  return 0;
}

inline std::vector<double> parse_sweep_values(const std::string& param,
                                              const std::string& values) {
  std::vector<double> out;
  if (values.empty()) {
    if (param == "lambda_d")
      for (int v = 0; v <= 9; ++v) out.push_back(v);
    else if (param == "temperature")
      for (double t = 0.5; t <= 256.0; t *= 2.0) out.push_back(t);
    else
      throw CliError("E_USAGE", "no default grid for sweep parameter " + param);
    return out;
  }
  const auto dots = values.find("..");
  if (dots != std::string::npos) {
    const long lo = std::stol(values.substr(0, dots));
    const long hi = std::stol(values.substr(dots + 2));
    for (long v = lo; v <= hi; ++v) out.push_back(double(v));
    return out;
  }
  std::stringstream ss(values);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(detail::trim(item)));
  if (out.empty()) throw CliError("E_USAGE", "empty sweep grid");
  return out;
}

inline int cmd_sweep(const CommonArgs& args, const std::string& param,
                     const std::string& values_arg) {
  if (param != "lambda_d" && param != "temperature")
    throw CliError("E_USAGE", "sweep supports --param lambda_d or temperature");
  RunConfig base_cfg = resolve_config(args);
  prepare_out_dir(args, base_cfg);
  const std::vector<double> values = parse_sweep_values(param, values_arg);

  std::vector<double> accs;
  for (double v : values) {
    RunConfig cfg = base_cfg;
    std::ostringstream vs;
    vs.precision(10);
    vs << v;
    apply_config_key(cfg, param, vs.str());
    cfg = finalize(cfg);
    LoadedRun run = build_run(cfg);
    Trainer trainer(*run.net, cfg.train);
    trainer.run(run.dataset.train);
    EvalResult ev = evaluate(*run.net, run.dataset.test, cfg.train);
    accs.push_back(ev.top1);

    const fs::path sub = fs::path(args.out_dir) / ("run_" + param + "_" + vs.str());
    fs::create_directories(sub);
    std::ofstream echo(sub / "resolved_config.txt");
    echo << config_echo(cfg);
    save_checkpoint((sub / "checkpoint.bin").string(), trainer.make_checkpoint(config_echo(cfg)));
    std::cout << "sweep " << param << " = " << v << ": test_top1 " << ev.top1 << "\n";
  }

  std::ofstream tsv(fs::path(args.out_dir) / "sweep.tsv");
  tsv << param << "\ttest_top1\n";
  for (size_t i = 0; i < values.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof(line), "%.6g\t%.4f\n", values[i], accs[i]);
    tsv << line;
  }
  write_line_chart((fs::path(args.out_dir) / "sweep.png").string(), values, accs);
  return 0;
}

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"HERBS head over multi-stage backbones: background suppression + "
               "high-temperature refinement"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "run configuration file");
    sub->add_option("--set", common.overrides, "override key=value (repeatable)");
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--seed", common.seed, "override the run seed");
    sub->add_flag("--overwrite", common.overwrite, "allow reusing a populated output directory");
  };

  auto* train = app.add_subcommand("train", "train a model and write checkpoint + logs");
  add_common(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint: prediction dump + reports");
  add_common(eval);
  std::string ckpt, split = "test";
  eval->add_option("--ckpt", ckpt, "checkpoint path");
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* vis = app.add_subcommand("visualize", "render heat-map PNGs from a checkpoint");
  add_common(vis);
  std::string source = "both";
  int64_t count = 8;
  vis->add_option("--ckpt", ckpt, "checkpoint path");
  vis->add_option("--source", source, "max_score, target_class or both")
      ->check(CLI::IsMember({"max_score", "target_class", "both"}));
  vis->add_option("--count", count, "number of test images");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference audit of analytic gradients");
  add_common(grad);
  int64_t per_module = 8;
  grad->add_option("--per-module", per_module, "parameters sampled per module");

  auto* sweep = app.add_subcommand("sweep", "grid of runs over one hyperparameter");
  add_common(sweep);
  std::string param, values;
  sweep->add_option("--param", param, "lambda_d or temperature")->required();
  sweep->add_option("--values", values, "comma list or lo..hi (default: the published grid)");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "E_USAGE: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, ckpt, split);
    if (*vis) return cmd_visualize(common, ckpt, source, count);
    if (*grad) return cmd_gradcheck(common, per_module);
    if (*sweep) return cmd_sweep(common, param, values);
    throw CliError("E_USAGE", "no subcommand");
  } catch (const CliError& e) {
    std::cerr << e.code << ": " << e.what() << "\n";
    return 1;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "E_NONFINITE_LOSS: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "E_CONFIG: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "E_IO: " << e.what() << "\n";
    return 1;
  }
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace cli
}  // namespace herbs
