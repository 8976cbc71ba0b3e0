#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "herbs/net.hpp"
#include "herbs/synthetic.hpp"
#include "herbs/train.hpp"

namespace herbs {

// Flat key = value run configuration covering the training harness, the
// model and the synthetic dataset. Unknown keys are rejected; '#' starts a
// comment. The resolved snapshot echoed into every run directory uses the
// same format and parses back to an identical config.
struct RunConfig {
  TrainConfig train;
  HerbsConfig model;
  SyntheticSpec data;
  uint64_t data_seed = 0;
  int eval_topk = 1;
  int generic_threshold = 6;

  void validate() const {
    train.validate();
    model.validate();
    data.validate();
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(trim(item)));
  return out;
}

inline std::string join_ints(const std::vector<int64_t>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected bool, got '" + s + "'");
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace detail

inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  try {
    // training
    if (key == "lr") cfg.train.lr = std::stod(value);
    else if (key == "weight_decay") cfg.train.weight_decay = std::stod(value);
    else if (key == "momentum") cfg.train.momentum = std::stod(value);
    else if (key == "batch_size") cfg.train.batch_size = std::stoll(value);
    else if (key == "accum_steps") cfg.train.accum_steps = std::stoll(value);
    else if (key == "epochs") cfg.train.epochs = std::stoll(value);
    else if (key == "seed") {
      cfg.train.seed = std::stoull(value);
      cfg.model.seed = cfg.train.seed;
      cfg.data_seed = cfg.train.seed;
    } else if (key == "input_size") cfg.train.input_size = std::stoll(value);
    else if (key == "resize_size") cfg.train.resize_size = std::stoll(value);
    else if (key == "norm_mean") {
      std::stringstream ss(value);
      std::string item;
      for (int c = 0; c < 3 && std::getline(ss, item, ','); ++c)
        cfg.train.norm_mean[c] = std::stod(detail::trim(item));
    } else if (key == "norm_std") {
      std::stringstream ss(value);
      std::string item;
      for (int c = 0; c < 3 && std::getline(ss, item, ','); ++c)
        cfg.train.norm_std[c] = std::stod(detail::trim(item));
    }
    // model
    else if (key == "variant") cfg.model.variant = variant_from_string(value);
    else if (key == "backbone") cfg.model.backbone = backbone_kind_from_string(value);
    else if (key == "base_width") cfg.model.base_width = std::stoll(value);
    else if (key == "neck_dim") cfg.model.neck_dim = std::stoll(value);
    else if (key == "topk") cfg.model.topk = detail::parse_int_list(value);
    else if (key == "lambda_m") cfg.model.bs.lambda_m = std::stod(value);
    else if (key == "lambda_d") cfg.model.bs.lambda_d = std::stod(value);
    else if (key == "lambda_l") cfg.model.bs.lambda_l = std::stod(value);
    else if (key == "lambda_r") cfg.model.lambda_r = std::stod(value);
    else if (key == "temperature") cfg.model.schedule.initial = std::stod(value);
    else if (key == "schedule") cfg.model.schedule.mode = schedule_mode_from_string(value);
    else if (key == "t_squared") cfg.model.t_squared = parse_bool(value);
    else if (key == "activation") cfg.model.act = activation_from_string(value);
    else if (key == "dropped_mode") cfg.model.dropped_mode = dropped_mode_from_string(value);
    else if (key == "readout") cfg.model.readout = readout_from_string(value);
    // synthetic dataset
    else if (key == "num_generic") cfg.data.num_generic = std::stoll(value);
    else if (key == "fine_per_generic") cfg.data.fine_per_generic = std::stoll(value);
    else if (key == "image_size") cfg.data.image_size = std::stoll(value);
    else if (key == "patch_size") cfg.data.patch_size = std::stoll(value);
    else if (key == "noise_level") cfg.data.noise_level = std::stod(value);
    else if (key == "samples_per_class") cfg.data.samples_per_class = std::stoll(value);
    else if (key == "train_fraction") cfg.data.train_fraction = std::stod(value);
    // evaluation
    else if (key == "eval_topk") cfg.eval_topk = std::stoi(value);
    else if (key == "generic_threshold") cfg.generic_threshold = std::stoi(value);
    else
      throw std::invalid_argument("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad value for config key " + key + ": '" + value + "'");
  }
}

inline void apply_config_line(RunConfig& cfg, const std::string& raw_line) {
  std::string line = raw_line;
  const auto hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = detail::trim(line);
  if (line.empty()) return;
  const auto eq = line.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config line is not key = value: '" + raw_line + "'");
  apply_config_key(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  while (std::getline(is, line)) apply_config_line(base, line);
  return base;
}

// full resolved snapshot; classes is derived, recorded as a comment
inline std::string config_echo(const RunConfig& cfg) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "# resolved run configuration\n";
  os << "lr = " << fmt_double(cfg.train.lr) << "\n";
  os << "weight_decay = " << fmt_double(cfg.train.weight_decay) << "\n";
  os << "momentum = " << fmt_double(cfg.train.momentum) << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "accum_steps = " << cfg.train.accum_steps << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "input_size = " << cfg.train.input_size << "\n";
  os << "resize_size = " << cfg.train.resize_size << "\n";
  os << "norm_mean = " << fmt_double(cfg.train.norm_mean[0]) << "," << fmt_double(cfg.train.norm_mean[1])
     << "," << fmt_double(cfg.train.norm_mean[2]) << "\n";
  os << "norm_std = " << fmt_double(cfg.train.norm_std[0]) << "," << fmt_double(cfg.train.norm_std[1])
     << "," << fmt_double(cfg.train.norm_std[2]) << "\n";
  os << "variant = " << to_string(cfg.model.variant) << "\n";
  os << "backbone = " << to_string(cfg.model.backbone) << "\n";
  os << "base_width = " << cfg.model.base_width << "\n";
  os << "neck_dim = " << cfg.model.neck_dim << "\n";
  os << "topk = " << detail::join_ints(cfg.model.topk) << "\n";
  os << "lambda_m = " << fmt_double(cfg.model.bs.lambda_m) << "\n";
  os << "lambda_d = " << fmt_double(cfg.model.bs.lambda_d) << "\n";
  os << "lambda_l = " << fmt_double(cfg.model.bs.lambda_l) << "\n";
  os << "lambda_r = " << fmt_double(cfg.model.lambda_r) << "\n";
  os << "temperature = " << fmt_double(cfg.model.schedule.initial) << "\n";
  os << "schedule = " << to_string(cfg.model.schedule.mode) << "\n";
  os << "t_squared = " << (cfg.model.t_squared ? "true" : "false") << "\n";
  os << "activation = " << to_string(cfg.model.act) << "\n";
  os << "dropped_mode = " << to_string(cfg.model.dropped_mode) << "\n";
  os << "readout = " << to_string(cfg.model.readout) << "\n";
  os << "num_generic = " << cfg.data.num_generic << "\n";
  os << "fine_per_generic = " << cfg.data.fine_per_generic << "\n";
  os << "image_size = " << cfg.data.image_size << "\n";
  os << "patch_size = " << cfg.data.patch_size << "\n";
  os << "noise_level = " << fmt_double(cfg.data.noise_level) << "\n";
  os << "samples_per_class = " << cfg.data.samples_per_class << "\n";
  os << "train_fraction = " << fmt_double(cfg.data.train_fraction) << "\n";
  os << "eval_topk = " << cfg.eval_topk << "\n";
  os << "generic_threshold = " << cfg.generic_threshold << "\n";
  os << "# derived: classes = " << cfg.data.classes() << "\n";
  return os.str();
}

// classes come from the dataset; the model seed follows the run seed
inline RunConfig finalize(RunConfig cfg) {
  cfg.model.classes = cfg.data.classes();
  cfg.model.seed = cfg.train.seed;
  cfg.data_seed = cfg.train.seed;
  cfg.validate();
  return cfg;
}

}  // namespace herbs
