#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "poclab/config.hpp"
#include "poclab/coupling.hpp"
#include "poclab/diagnostics.hpp"
#include "poclab/dynamics.hpp"
#include "poclab/io.hpp"
#include "poclab/potential.hpp"
#include "poclab/reduced.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace poclab;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericalAbort = 3;

std::uint64_t content_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct LoadedConfig {
  ExperimentConfig cfg;
  std::string raw;
  std::string path;
};

LoadedConfig load_config(const std::string& path, long seed_override) {
  LoadedConfig lc;
  lc.path = path;
  lc.raw = slurp(path);
  lc.cfg = ExperimentConfig::from_toml(Toml::parse_file(path));
  if (seed_override >= 0) {
    lc.cfg.seeds.init = static_cast<std::uint64_t>(seed_override);
    lc.cfg.seeds.data = static_cast<std::uint64_t>(seed_override) + 1;
    lc.cfg.seeds.batch = static_cast<std::uint64_t>(seed_override) + 2;
  }
  return lc;
}

void write_manifest(const fs::path& dir, const LoadedConfig& lc,
                    const std::vector<std::string>& outputs, const json& extra = {}) {
  json m;
  m["name"] = lc.cfg.name;
  m["config_path"] = lc.path;
  m["config_text"] = lc.raw;
  m["config_hash"] = content_hash(lc.raw);
  m["seeds"] = {{"init", lc.cfg.seeds.init},
                {"data", lc.cfg.seeds.data},
                {"batch", lc.cfg.seeds.batch}};
  m["threads"] = thread_cap();
  m["outputs"] = outputs;
  m["format_version"] = 1;
  if (!extra.is_null()) m["summary"] = extra;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << "\n";
}

int cmd_run(const LoadedConfig& lc) {
  const ExperimentConfig& cfg = lc.cfg;
  fs::create_directories(cfg.output_dir);
  FlowSchedule sched = cfg.schedule;
  sched.store_snapshots = false;
  Trajectory traj = run_flow(cfg.problem, sched, cfg.seeds, cfg.flow_width);

  const fs::path dir(cfg.output_dir);
  {
    CsvWriter csv((dir / "metrics.csv").string(),
                  {"step", "time", "loss_pop", "loss_emp", "mean_alignment"});
    for (std::size_t k = 0; k < traj.steps.size(); ++k)
      csv.row({static_cast<double>(traj.steps[k]), traj.times[k], traj.losses[k],
               traj.losses_emp[k], traj.mean_alignments[k]});
  }
  write_svg_lines((dir / "loss.svg").string(), cfg.name + ": loss", traj.times,
                  {{"loss", "#1f6fb2", traj.losses}}, true);
  write_svg_lines((dir / "alignment.svg").string(), cfg.name + ": mean alignment", traj.times,
                  {{"mean alignment", "#b2401f", traj.mean_alignments}});
  write_manifest(dir, lc, {"metrics.csv", "loss.svg", "alignment.svg"},
                 {{"final_loss", traj.losses.back()},
                  {"final_alignment", traj.mean_alignments.back()}});
  std::cout << "run: wrote " << cfg.output_dir << " (final loss " << traj.losses.back()
            << ")\n";
  return 0;
}

int cmd_couple(const LoadedConfig& lc) {
  const ExperimentConfig& cfg = lc.cfg;
  if (cfg.widths.empty() || cfg.proxy_width <= 0)
    throw std::runtime_error("config: couple needs [coupling] widths and proxy");
  fs::create_directories(cfg.output_dir);
  FlowSchedule sched = cfg.schedule;
  sched.store_snapshots = false;
  CouplingRecord rec = run_coupled(cfg.problem, cfg.widths, cfg.proxy_width, sched, cfg.seeds);

  const fs::path dir(cfg.output_dir);
  std::vector<std::string> outputs;
  std::vector<SvgSeries> risk_s, sfe_s, spe_s;
  const std::vector<std::string> palette = {"#1f6fb2", "#b2401f", "#3a9e4f", "#8344b0",
                                            "#b0893a"};
  for (std::size_t k = 0; k < rec.widths.size(); ++k) {
    const WidthSeries& ws = rec.widths[k];
    const std::string fname = "width_" + std::to_string(ws.width) + ".csv";
    CsvWriter csv((dir / fname).string(),
                  {"step", "time", "risk", "func_error", "scaled_func_error", "mean_delta",
                   "scaled_param_error"});
    for (std::size_t r = 0; r < rec.steps.size(); ++r)
      csv.row({static_cast<double>(rec.steps[r]), rec.times[r], ws.risk[r], ws.func_error[r],
               ws.scaled_func_error[r], ws.mean_delta[r], ws.scaled_param_error[r]});
    outputs.push_back(fname);

    const std::string hname = "hist_" + std::to_string(ws.width) + ".csv";
    CsvWriter hcsv((dir / hname).string(), {"time", "bin_lo", "bin_hi", "count"});
    for (const auto& h : ws.histograms)
      for (std::size_t b = 0; b + 1 < h.edges.size(); ++b)
        hcsv.row({h.time, h.edges[b], h.edges[b + 1], static_cast<double>(h.counts[b])});
    outputs.push_back(hname);

    const std::string color = palette[k % palette.size()];
    const std::string label = "m=" + std::to_string(ws.width);
    risk_s.push_back({label, color, ws.risk});
    sfe_s.push_back({label, color, ws.scaled_func_error});
    spe_s.push_back({label, color, ws.scaled_param_error});
  }
  write_svg_lines((dir / "risk.svg").string(), cfg.name + ": risk", rec.times, risk_s, true);
  write_svg_lines((dir / "scaled_func_error.svg").string(),
                  cfg.name + ": scaled function error", rec.times, sfe_s, true);
  write_svg_lines((dir / "scaled_param_error.svg").string(),
                  cfg.name + ": scaled parameter error", rec.times, spe_s, true);
  outputs.insert(outputs.end(), {"risk.svg", "scaled_func_error.svg", "scaled_param_error.svg"});
  write_manifest(dir, lc, outputs, {{"proxy_width", rec.proxy_width}});
  std::cout << "couple: wrote " << cfg.output_dir << "\n";
  return 0;
}

int cmd_diagnose(const LoadedConfig& lc) {
  const ExperimentConfig& cfg = lc.cfg;
  fs::create_directories(cfg.output_dir);
  FlowSchedule sched = cfg.schedule;
  sched.store_snapshots = true;
  sched.record_every = 1;  // dense snapshots; diagnostics runs are small
  Trajectory traj = run_flow(cfg.problem, sched, cfg.seeds, cfg.flow_width);

  const fs::path dir(cfg.output_dir);
  {
    CsvWriter csv((dir / "local_hessian.csv").string(),
                  {"step", "particle", "lambda_max", "alignment"});
    for (std::size_t r = 0; r < traj.snapshots.size(); ++r) {
      const ParticleSystem& sys = traj.snapshots[r];
      for (int i = 0; i < sys.width(); ++i) {
        const Eigen::VectorXd w = sys.weights.row(i);
        const double lam = hessian_top_eigenvalue(
            local_hessian(w, sys, cfg.problem.target, cfg.problem.link()));
        csv.row({static_cast<double>(traj.steps[r]), static_cast<double>(i), lam,
                 alignment(w, cfg.problem.target)});
      }
    }
  }
  {
    const int T = static_cast<int>(traj.snapshots.size());
    std::vector<std::pair<int, int>> st;
    for (int s = 0; s < T; s += std::max(1, T / 4))
      for (int t = s; t < T; t += std::max(1, T / 4)) st.push_back({s, t});
    std::vector<int> parts;
    for (int i = 0; i < std::min(8, cfg.flow_width); ++i) parts.push_back(i);
    CsvWriter csv((dir / "stability.csv").string(), {"s", "t", "particle", "spectral_norm"});
    for (auto [s, t] : st)
      for (int p : parts)
        csv.row({static_cast<double>(s), static_cast<double>(t), static_cast<double>(p),
                 spectral_norm(stability_matrix(traj, cfg.problem, p, s, t))});
    const JMaxResult jm = j_max_estimate(traj, cfg.problem, parts, st);
    json extra = {{"j_max", jm.value},
                  {"j_max_particle", jm.particle},
                  {"j_max_s", jm.s_idx},
                  {"j_max_t", jm.t_idx}};
    write_manifest(dir, lc, {"local_hessian.csv", "stability.csv"}, extra);
  }
  std::cout << "diagnose: wrote " << cfg.output_dir << "\n";
  return 0;
}

int cmd_reduce(const LoadedConfig& lc, const std::vector<int>& dims_cli, int kstar_cli,
               double delta_cli) {
  ExperimentConfig cfg = lc.cfg;
  if (!dims_cli.empty()) cfg.reduced_dims = dims_cli;
  if (kstar_cli > 0) cfg.reduced_kstar = kstar_cli;
  if (delta_cli > 0) cfg.reduced_delta = delta_cli;
  if (cfg.reduced_dims.empty()) throw std::runtime_error("config: reduce needs d list");
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);

  const LinkFunction link = LinkFunction::he(cfg.reduced_kstar);
  std::vector<std::string> outputs;
  CsvWriter table((dir / "escape_times.csv").string(), {"d", "kstar", "delta", "T"});
  outputs.push_back("escape_times.csv");
  for (int d : cfg.reduced_dims) {
    AlphaEnsemble ens = alpha_ensemble_quantile(d, cfg.reduced_ensemble, link.degree);
    ReducedTrajectory traj =
        run_reduced(link, d, ens, cfg.reduced_eta, cfg.reduced_delta);
    table.row({static_cast<double>(d), static_cast<double>(cfg.reduced_kstar),
               cfg.reduced_delta, traj.T_delta});
    const std::string fname = "reduced_d" + std::to_string(d) + ".csv";
    CsvWriter csv((dir / fname).string(),
                  {"step", "time", "loss_proxy", "r_kstar", "q10", "q50", "q90"});
    for (std::size_t r = 0; r < traj.times.size(); ++r) {
      Eigen::VectorXd sorted = traj.alphas[r];
      std::sort(sorted.data(), sorted.data() + sorted.size());
      const int n = static_cast<int>(sorted.size());
      AlphaEnsemble snap;
      snap.alphas = traj.alphas[r];
      snap.weights = traj.weights;
      snap.d = d;
      snap.refresh_moments(cfg.reduced_kstar);
      csv.row({traj.times[r] / traj.eta, traj.times[r], traj.loss_proxy[r],
               snap.r(cfg.reduced_kstar), sorted(n / 10), sorted(n / 2),
               sorted(9 * n / 10)});
    }
    outputs.push_back(fname);
    std::cout << "reduce: d=" << d << " T(" << cfg.reduced_delta << ")=" << traj.T_delta
              << (traj.converged ? "" : " (not converged)") << "\n";
  }
  write_manifest(dir, lc, outputs);
  return 0;
}

int cmd_potential(const LoadedConfig& lc) {
  const ExperimentConfig& cfg = lc.cfg;
  if (!cfg.problem.target.atomic_like())
    throw std::runtime_error("config: potential needs an atomic target");
  fs::create_directories(cfg.output_dir);
  FlowSchedule sched = cfg.schedule;
  sched.store_snapshots = false;
  Trajectory traj = run_flow(cfg.problem, sched, cfg.seeds, cfg.flow_width);

  ParticleSystem final_sys =
      init_particles(cfg.problem.cov.d, cfg.flow_width, cfg.seeds.init,
                     cfg.problem.second_layer);
  // re-run to keep memory flat, keeping only the last state
  {
    FlowSchedule s2 = sched;
    s2.store_snapshots = true;
    s2.record_every = s2.n_steps;
    Trajectory t2 = run_flow(cfg.problem, s2, cfg.seeds, cfg.flow_width);
    final_sys = t2.snapshots.back();
  }
  const auto [teachers, tw] = cfg.problem.target.atoms();
  const TeacherAssignment asg = assign_xi_infinity(final_sys, teachers);
  const SpectralDecomposition bsd =
      spectral_decompose(asg, teachers, cfg.problem.link());

  // random small coupling error + 100 random perturbation directions
  SequentialRng rng(cfg.seeds.init ^ 0x9d, 51);
  const int m = final_sys.width(), d = final_sys.dim();
  Eigen::MatrixXd delta(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) delta(i, j) = 1e-3 * rng.gaussian();
  int l1_passes = 0;
  const int l1_trials = 100;
  for (int t = 0; t < l1_trials; ++t) {
    Eigen::MatrixXd G(m, d);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < d; ++j) G(i, j) = rng.gaussian();
      G.row(i) /= G.row(i).norm();
    }
    if (l1_perturbation_check(delta, G, bsd).pass) ++l1_passes;
  }
  const DescentReport desc =
      lemma_descent_report(final_sys, delta, bsd, cfg.problem.target, cfg.problem.link());
  const PotentialValue pv = potential_value(delta, bsd);

  json rep;
  rep["final_loss"] = traj.losses.back();
  rep["n_clusters"] = bsd.clusters.size();
  rep["balance_constant"] = bsd.balance_constant;
  rep["degenerate_occupancy"] = bsd.degenerate_occupancy;
  rep["l1_passes"] = l1_passes;
  rep["l1_trials"] = l1_trials;
  rep["phi"] = pv.phi;
  rep["omega"] = pv.omega;
  rep["psi"] = pv.psi;
  rep["interaction_pairing"] = desc.interaction_pairing;
  rep["local_pairing"] = desc.local_pairing;
  json evs = json::array();
  for (const auto& cl : bsd.clusters)
    evs.push_back({{"lambda", cl.lambda},
                   {"multiplicity", cl.frame.cols()},
                   {"eta", cl.eta}});
  rep["clusters"] = evs;

  const fs::path dir(cfg.output_dir);
  std::ofstream(dir / "potential_report.json") << rep.dump(2) << "\n";
  std::ofstream txt(dir / "potential_report.txt");
  txt << "potential report for " << cfg.name << "\n"
      << "  clusters: " << bsd.clusters.size() << ", C_b = " << bsd.balance_constant << "\n"
      << "  L1 inequality: " << l1_passes << "/" << l1_trials << " passed\n"
      << "  Phi = " << pv.phi << " (Omega " << pv.omega << " + Psi " << pv.psi << ")\n"
      << "  <grad Phi, -H Delta> = " << desc.interaction_pairing << "\n"
      << "  <grad Phi, D Delta>  = " << desc.local_pairing << "\n";
  write_manifest(dir, lc, {"potential_report.json", "potential_report.txt"}, rep);
  std::cout << "potential: wrote " << cfg.output_dir << " (L1 " << l1_passes << "/"
            << l1_trials << ")\n";
  return 0;
}

std::vector<std::vector<double>> read_csv(const fs::path& p, std::vector<std::string>* hdr) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("report: cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  if (hdr) {
    std::istringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) hdr->push_back(tok);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::vector<double> row;
    while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "manifest.json"))
    throw std::runtime_error("report: no manifest.json in " + run_dir);
  json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  json rep;
  rep["name"] = manifest.value("name", "");
  rep["config_hash"] = manifest.value("config_hash", 0ULL);

  // width-stability of the scaled coupling metrics, if this is a coupled run
  std::vector<double> sfe_final, spe_final;
  double sfe_ratio = 0.0, spe_ratio = 0.0;
  for (const auto& out : manifest["outputs"]) {
    const std::string f = out.get<std::string>();
    if (f.rfind("width_", 0) != 0) continue;
    std::vector<std::string> hdr;
    const auto rows = read_csv(dir / f, &hdr);
    if (rows.empty()) continue;
    sfe_final.push_back(rows.back()[4]);
    spe_final.push_back(rows.back()[6]);
  }
  if (sfe_final.size() > 1) {
    const auto [a, b] = std::minmax_element(sfe_final.begin(), sfe_final.end());
    const auto [c, e] = std::minmax_element(spe_final.begin(), spe_final.end());
    sfe_ratio = *a > 0 ? *b / *a : 0.0;
    spe_ratio = *c > 0 ? *e / *c : 0.0;
    rep["scaled_func_error_final_ratio"] = sfe_ratio;
    rep["scaled_param_error_final_ratio"] = spe_ratio;
    std::cout << "report: scaled function error final max/min ratio " << sfe_ratio
              << ", scaled parameter error ratio " << spe_ratio << "\n";
  }
  if (fs::exists(dir / "metrics.csv")) {
    const auto rows = read_csv(dir / "metrics.csv", nullptr);
    if (!rows.empty()) {
      rep["final_loss"] = rows.back()[2];
      rep["final_alignment"] = rows.back()[4];
      bool all_zero = true;
      for (const auto& r : rows)
        if (r[2] != rows.front()[2]) all_zero = false;
      if (all_zero) rep["trivial_flat_metrics"] = true;
      std::cout << "report: final loss " << rows.back()[2] << ", final alignment "
                << rows.back()[4] << (all_zero ? " [flat series]" : "") << "\n";
    }
  }
  if (fs::exists(dir / "escape_times.csv")) {
    const auto rows = read_csv(dir / "escape_times.csv", nullptr);
    json tbl = json::array();
    for (const auto& r : rows) tbl.push_back({{"d", r[0]}, {"T", r[3]}});
    rep["escape_times"] = tbl;
    if (rows.size() > 1 && rows.front()[3] > 0)
      std::cout << "report: T ratio (last/first d) " << rows.back()[3] / rows.front()[3]
                << "\n";
  }
  if (manifest.contains("summary")) rep["run_summary"] = manifest["summary"];
  std::ofstream(dir / "report.json") << rep.dump(2) << "\n";
  std::cout << "report: wrote " << (dir / "report.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mean-field particle training laboratory"};
  app.require_subcommand(1);

  std::string config_path, run_dir, dims_arg;
  long seed_override = -1;
  int kstar = 0;
  double delta = 0.0;

  auto add_config = [&](CLI::App* sub, bool required = true) {
    auto* opt = sub->add_option("--config", config_path, "TOML config file");
    if (required) opt->required();
    sub->add_option("--seed", seed_override, "override all seeds from this base value");
  };

  auto* run = app.add_subcommand("run", "single-network training run");
  add_config(run);
  auto* couple = app.add_subcommand("couple", "coupled-width training run");
  add_config(couple);
  auto* diagnose = app.add_subcommand("diagnose", "Hessian and stability diagnostics");
  add_config(diagnose);
  auto* reduce = app.add_subcommand("reduce", "alignment-ODE escape-time sweep");
  add_config(reduce);
  reduce->add_option("--d", dims_arg, "comma-separated dimensions");
  reduce->add_option("--kstar", kstar, "information exponent");
  reduce->add_option("--delta", delta, "target loss level");
  auto* potential = app.add_subcommand("potential", "spectral potential checks");
  add_config(potential);
  auto* report = app.add_subcommand("report", "summarize a finished run directory");
  report->add_option("--dir", run_dir, "run output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) return cmd_report(run_dir);
    const LoadedConfig lc = load_config(config_path, seed_override);
    if (run->parsed()) return cmd_run(lc);
    if (couple->parsed()) return cmd_couple(lc);
    if (diagnose->parsed()) return cmd_diagnose(lc);
    if (potential->parsed()) return cmd_potential(lc);
    if (reduce->parsed()) {
      std::vector<int> dims;
      std::istringstream ds(dims_arg);
      std::string tok;
      while (std::getline(ds, tok, ',')) if (!tok.empty()) dims.push_back(std::stoi(tok));
      return cmd_reduce(lc, dims, kstar, delta);
    }
  } catch (const NumericalAbort& e) {
    const fs::path dump = fs::path("poc_lab_abort_dump.bin");
    try {
      std::ofstream out(dump, std::ios::binary);
      const auto& W = e.dump.weights;
      for (Eigen::Index i = 0; i < W.size(); ++i)
        out.write(reinterpret_cast<const char*>(&W(i)), sizeof(double));
    } catch (...) {
    }
    std::cerr << "numerical abort: " << e.what() << " (state dumped to " << dump.string()
              << ")\n";
    return kExitNumericalAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}
