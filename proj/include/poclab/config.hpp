#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poclab/dynamics.hpp"

namespace poclab {

// Minimal TOML subset: [section], key = value with bools, numbers, quoted
// strings, and flat numeric arrays. Comments start with '#'.
class Toml {
 public:
  static Toml parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  static Toml parse(const std::string& text) {
    Toml t;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail(lineno, "unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(lineno, "expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty() || val.empty()) fail(lineno, "empty key or value");
      t.values_[section.empty() ? key : section + "." + key] = val;
    }
    return t;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    std::string v = raw(key);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
      return v.substr(1, v.size() - 2);
    return v;
  }

  double get_double(const std::string& key) const { return std::stod(raw(key)); }
  long get_int(const std::string& key) const { return std::stol(raw(key)); }

  bool get_bool(const std::string& key) const {
    const std::string v = raw(key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::runtime_error("config: key '" + key + "' is not a bool");
  }

  std::vector<double> get_array(const std::string& key) const {
    std::string v = raw(key);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
      throw std::runtime_error("config: key '" + key + "' is not an array");
    std::vector<double> out;
    std::istringstream in(v.substr(1, v.size() - 2));
    std::string tok;
    while (std::getline(in, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) const;

 private:
  static void fail(int lineno, const std::string& msg) {
    throw std::runtime_error("config: line " + std::to_string(lineno) + ": " + msg);
  }
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config: missing key '" + key + "'");
    return it->second;
  }

  std::map<std::string, std::string> values_;
};

template <>
inline double Toml::get_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
template <>
inline long Toml::get_or(const std::string& key, long fallback) const {
  return has(key) ? get_int(key) : fallback;
}
template <>
inline bool Toml::get_or(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}
template <>
inline std::string Toml::get_or(const std::string& key, std::string fallback) const {
  return has(key) ? get_string(key) : fallback;
}

struct ExperimentConfig {
  std::string name = "run";
  std::string output_dir = "out";
  ProblemSpec problem;
  FlowSchedule schedule;
  RunSeeds seeds;
  std::vector<int> widths;
  int proxy_width = 0;
  int flow_width = 128;

  // reduced-dynamics sweep
  std::vector<int> reduced_dims;
  int reduced_kstar = 4;
  double reduced_delta = 0.3;
  double reduced_eta = 0.002;
  int reduced_ensemble = 1024;

  static ExperimentConfig from_toml(const Toml& t) {
    ExperimentConfig cfg;
    cfg.name = t.get_or<std::string>("name", "run");
    cfg.output_dir = t.get_or<std::string>("output_dir", "out/" + cfg.name);

    const int d = static_cast<int>(t.get_or<long>("problem.d", 32));
    const std::string cov = t.get_or<std::string>("problem.covariates", "gaussian");
    if (cov == "gaussian")
      cfg.problem.cov = CovariateSpec::gaussian(d);
    else if (cov == "rademacher")
      cfg.problem.cov = CovariateSpec::rademacher(d);
    else
      throw std::runtime_error("config: unknown covariates '" + cov + "'");

    if (t.has("problem.softplus_temp")) {
      cfg.problem.act = Activation::softplus(t.get_double("problem.softplus_temp"));
    } else {
      std::vector<double> h = t.has("problem.hermite")
                                  ? t.get_array("problem.hermite")
                                  : std::vector<double>{0, 0, 0, 0, 1};
      cfg.problem.act = Activation::hermite(LinkFunction::hermite(h));
    }

    const std::string target = t.get_or<std::string>("problem.target", "single_index");
    auto e1 = [&] {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
      v(0) = 1;
      return v;
    };
    if (target == "single_index") {
      cfg.problem.target = TargetSpec::single_index(cfg.problem.act.link, e1());
    } else if (target == "atomic_orthogonal") {
      const int k = static_cast<int>(t.get_or<long>("problem.teachers", 2));
      if (k > d) throw std::runtime_error("config: more orthogonal teachers than dimensions");
      Eigen::MatrixXd ws = Eigen::MatrixXd::Zero(k, d);
      for (int i = 0; i < k; ++i) ws(i, i) = 1;
      cfg.problem.target = TargetSpec::atomic(cfg.problem.act.link, ws,
                                              Eigen::VectorXd::Constant(k, 1.0 / k));
    } else if (target == "circle") {
      Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(2, d);
      basis(0, 0) = 1;
      basis(1, 1) = 1;
      cfg.problem.target = TargetSpec::circle(cfg.problem.act.link, basis);
    } else if (target == "xor" || target == "staircase") {
      const int k = static_cast<int>(t.get_or<long>("problem.parity_k", 4));
      std::vector<int> idx(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
      cfg.problem.target =
          target == "xor" ? TargetSpec::xor_k(idx) : TargetSpec::staircase(idx);
    } else {
      throw std::runtime_error("config: unknown target '" + target + "'");
    }
    cfg.problem.target.noise_std = t.get_or<double>("problem.noise_std", 0.0);
    cfg.problem.second_layer.enabled = t.get_or<bool>("problem.second_layer", false);
    cfg.problem.second_layer.scale = t.get_or<double>("problem.second_layer_scale", 1.0);

    const std::string mode = t.get_or<std::string>("schedule.mode", "population");
    cfg.schedule.mode =
        mode == "empirical" ? FlowSchedule::Mode::Empirical : FlowSchedule::Mode::Population;
    cfg.schedule.eta = t.get_or<double>("schedule.eta", 0.01);
    cfg.schedule.n_steps = static_cast<int>(t.get_or<long>("schedule.steps", 100));
    cfg.schedule.record_every = static_cast<int>(t.get_or<long>("schedule.record_every", 10));
    cfg.schedule.batch_size = static_cast<int>(t.get_or<long>("schedule.batch", 0));
    cfg.schedule.dataset_size = static_cast<int>(t.get_or<long>("schedule.n", 0));
    cfg.schedule.store_snapshots = t.get_or<bool>("schedule.snapshots", false);
    if (!(cfg.schedule.eta > 0) || cfg.schedule.eta > 1)
      throw std::runtime_error("config: schedule.eta must be in (0, 1]");

    cfg.flow_width = static_cast<int>(t.get_or<long>("schedule.width", 128));
    if (t.has("coupling.widths")) {
      for (double w : t.get_array("coupling.widths")) cfg.widths.push_back(static_cast<int>(w));
      cfg.proxy_width = static_cast<int>(t.get_or<long>(
          "coupling.proxy", cfg.widths.empty() ? 0 : 4 * cfg.widths.back()));
    }

    cfg.seeds.init = static_cast<std::uint64_t>(t.get_or<long>("seeds.init", 1));
    cfg.seeds.data = static_cast<std::uint64_t>(t.get_or<long>("seeds.data", 2));
    cfg.seeds.batch = static_cast<std::uint64_t>(t.get_or<long>("seeds.batch", 3));

    if (t.has("reduced.d_list"))
      for (double dd : t.get_array("reduced.d_list"))
        cfg.reduced_dims.push_back(static_cast<int>(dd));
    cfg.reduced_kstar = static_cast<int>(t.get_or<long>("reduced.kstar", 4));
    cfg.reduced_delta = t.get_or<double>("reduced.delta", 0.3);
    cfg.reduced_eta = t.get_or<double>("reduced.eta", 0.002);
    cfg.reduced_ensemble = static_cast<int>(t.get_or<long>("reduced.ensemble", 1024));
    return cfg;
  }
};

}  // namespace poclab
