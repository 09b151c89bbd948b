#pragma once

// Subcommand bodies behind the paritylink executable. Each takes a parsed
// Config and writes its files into an output directory; numbers in CSV files
// use 9 significant digits and LF line endings so runs can be diffed bytewise.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "paritylink/config.hpp"
#include "paritylink/protocol.hpp"
#include "paritylink/tomography.hpp"

namespace paritylink {

struct RunOptions {
  std::filesystem::path out_dir = ".";
  std::size_t workers = 1;
  std::ostream* log = &std::cerr;  // warnings
};

inline std::string fmt9(double x) {
  if (x == 0.0) x = 0.0;  // fold -0
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

// Report numbers keep 12 significant digits: stable text, well past any tolerance.
inline double round12(double x) {
  if (!std::isfinite(x) || x == 0.0) return x == 0.0 ? 0.0 : x;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return std::strtod(buf, nullptr);
}

template <class Matrix>
Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      row.push_back(Json::array({round12(m(r, c).real()), round12(m(r, c).imag())}));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json to_json(const DensityMatrix2& rho) { return matrix_json(rho.matrix()); }

inline Json to_json(const ChiMatrix& chi) {
  return {{"matrix", matrix_json(chi.matrix())}, {"projected", chi.projected()}};
}

inline Json to_json(const SuccessLedger& l) {
  return {{"p_prep", round12(l.p_prep)},
          {"p_route", round12(l.p_route)},
          {"p_parity", round12(l.p_parity)},
          {"p_readout", round12(l.p_readout)},
          {"p_transmission", round12(l.p_transmission)},
          {"p_total", round12(l.p_total)},
          {"simulated_total", round12(l.simulated_total)},
          {"exact_lossless_total", l.exact_lossless_total.str()}};
}

inline Json to_json(const ScenarioReport& rep, const Config& cfg) {
  Json j;
  j["config"] = to_json(cfg);
  Json inputs = Json::array();
  for (const auto& r : rep.inputs) {
    inputs.push_back({{"name", r.name},
                      {"input", to_json(r.input)},
                      {"rho", to_json(r.rho)},
                      {"fidelity", round12(r.fidelity)},
                      {"accepted_probability", round12(r.accepted_probability)}});
  }
  j["inputs"] = std::move(inputs);
  if (rep.process) {
    j["process"] = {{"chi", to_json(rep.process->chi)},
                    {"entanglement_fidelity", round12(rep.process->entanglement_fidelity)},
                    {"average_fidelity", round12(rep.process->average_fidelity)}};
  } else {
    j["process"] = nullptr;
  }
  j["ledger"] = rep.ledger ? to_json(*rep.ledger) : Json(nullptr);
  j["visibility"] = rep.visibility ? Json(round12(*rep.visibility)) : Json(nullptr);
  j["warnings"] = rep.warnings;
  return j;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigurationError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigurationError("failed writing '" + path.string() + "'");
}

inline std::string json_text(const Json& j) { return j.dump(2) + "\n"; }

inline void warn_all(const RunOptions& opt, const std::vector<std::string>& warnings) {
  if (!opt.log) return;
  for (const auto& w : warnings) *opt.log << "warning: " << w << "\n";
}

}  // namespace detail

// Sets the master seed (noise trials, Poisson draws, Haar sampling).
inline void apply_seed(Config& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.scenario.noise.seed = seed;
}

// ---------------------------------------------------------------- simulate

inline std::string histogram_csv(const ScenarioReport& rep) {
  std::string out = "input,t_x_minus_t_y_ns,probability\n";
  for (const auto& r : rep.inputs) {
    for (std::size_t i = 0; i < r.histogram.weights.size(); ++i) {
      out += r.name + "," + fmt9(r.histogram.bin_center(i)) + "," +
             fmt9(r.histogram.weights[i]) + "\n";
    }
  }
  return out;
}

inline ScenarioReport cmd_simulate(const Config& cfg, const RunOptions& opt = {}) {
  ScenarioReport rep = run_endtoend(cfg.scenario, opt.workers);
  detail::warn_all(opt, rep.warnings);
  detail::write_file(opt.out_dir / cfg.output.report, detail::json_text(to_json(rep, cfg)));
  detail::write_file(opt.out_dir / cfg.output.histogram, histogram_csv(rep));
  return rep;
}

// ---------------------------------------------------------------- scan

inline std::string scan_csv(const ScanResult& scan) {
  std::string out = "delta_t_b_um,rate_d,rate_dbar,visibility\n";
  for (const auto& p : scan.points) {
    out += fmt9(p.offset_um) + "," + fmt9(p.rate_d) + "," + fmt9(p.rate_dbar) + "," +
           fmt9(p.visibility) + "\n";
  }
  return out;
}

inline ScanResult cmd_scan(const Config& cfg, const RunOptions& opt = {}) {
  std::vector<std::string> warnings;
  const auto offsets = scan_offsets(cfg.scan.start_um, cfg.scan.stop_um, cfg.scan.step_um, &warnings);
  ScanResult scan = interference_scan(cfg.scenario, offsets, opt.workers);
  scan.warnings.insert(scan.warnings.end(), warnings.begin(), warnings.end());
  if (!scan.fit.ok) scan.warnings.push_back("no envelope fit: " + scan.fit.note);
  detail::warn_all(opt, scan.warnings);

  Json fit;
  fit["fit_ok"] = scan.fit.ok;
  fit["fwhm_um"] = scan.fit.ok ? Json(round12(scan.fit.fwhm_um)) : Json(nullptr);
  fit["center_um"] = scan.fit.ok ? Json(round12(scan.fit.center_um)) : Json(nullptr);
  fit["amplitude"] = scan.fit.ok ? Json(round12(scan.fit.amplitude)) : Json(nullptr);
  fit["note"] = scan.fit.note;
  fit["points"] = scan.points.size();
  fit["warnings"] = scan.warnings;
  detail::write_file(opt.out_dir / cfg.output.scan, scan_csv(scan));
  detail::write_file(opt.out_dir / cfg.output.scan_fit, detail::json_text(fit));
  return scan;
}

// ---------------------------------------------------------------- tomo

struct ProbeTomography {
  std::string name;
  DensityMatrix2 truth;
  TomographyCounts counts;  // pooled over repetitions
  DensityMatrix2 estimate;
  bool clipped = false;
  double mean_fidelity_to_truth = 0.0;  // over repetitions
  double std_fidelity_to_truth = 0.0;
  double fidelity_to_input = 0.0;
};

struct TomographyReport {
  std::vector<ProbeTomography> probes;
  ChiMatrix chi;
  double entanglement_fidelity = 0.0;
  double entanglement_fidelity_bell = 0.0;
  double average_fidelity = 0.0;
  FidelityEstimate haar;
  std::vector<std::string> warnings;
};

inline std::string counts_csv(const std::vector<ProbeTomography>& probes) {
  std::string out = "probe,n_h,n_v,n_d,n_l\n";
  for (const auto& p : probes) {
    out += p.name;
    for (double c : p.counts.counts) out += "," + fmt9(c);
    out += "\n";
  }
  return out;
}

// Reads "probe,n_h,n_v,n_d,n_l" rows (header required).
inline std::map<std::string, TomographyCounts> read_counts_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read counts file '" + path.string() + "'");
  std::map<std::string, TomographyCounts> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "probe,n_h,n_v,n_d,n_l") {
        throw SchemaError(path.string() + ":1: expected header probe,n_h,n_v,n_d,n_l");
      }
      continue;
    }
    std::stringstream ss(line);
    std::string name, cell;
    std::getline(ss, name, ',');
    TomographyCounts c;
    for (std::size_t i = 0; i < 4; ++i) {
      if (!std::getline(ss, cell, ',')) {
        throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
      }
      try {
        std::size_t used = 0;
        c.counts[i] = std::stod(cell, &used);
        if (used != cell.size() || c.counts[i] < 0.0) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": bad count '" + cell + "'");
      }
    }
    out[name] = c;
  }
  return out;
}

inline TomographyReport run_tomography(const Config& cfg, const RunOptions& opt = {}) {
  Scenario s = cfg.scenario;
  s.inputs = probe_inputs();
  const ScenarioReport truth = run_endtoend(s, opt.workers);

  std::map<std::string, TomographyCounts> external;
  if (!cfg.tomography.counts_csv.empty()) external = read_counts_csv(cfg.tomography.counts_csv);

  TomographyReport rep{{}, identity_process(), 0, 0, 0, {}, truth.warnings};
  const double n = static_cast<double>(cfg.tomography.n_total);
  for (std::size_t k = 0; k < truth.inputs.size(); ++k) {
    const InputReport& in = truth.inputs[k];
    ProbeTomography p{in.name, in.rho, {}, in.rho};
    if (!external.empty()) {
      auto it = external.find(in.name);
      if (it == external.end()) throw ValidationError("counts file lacks probe '" + in.name + "'");
      p.counts = it->second;
    } else if (cfg.tomography.exact) {
      p.counts = expected_counts(in.rho, n);
    } else {
      const std::size_t reps = cfg.tomography.repetitions;
      double sum = 0.0, sum_sq = 0.0;
      for (std::size_t r = 0; r < reps; ++r) {
        Rng rng = stream_rng(cfg.seed ^ 0x70A0ULL, k * reps + r);
        const TomographyCounts c = simulate_counts(in.rho, n, rng);
        for (std::size_t i = 0; i < 4; ++i) p.counts.counts[i] += c.counts[i];
        const double f = state_fidelity(reconstruct_state(c), in.rho);
        sum += f;
        sum_sq += f * f;
      }
      const double m = sum / static_cast<double>(reps);
      p.mean_fidelity_to_truth = m;
      p.std_fidelity_to_truth =
          reps > 1 ? std::sqrt(std::max(0.0, (sum_sq - reps * m * m) / (reps - 1.0))) : 0.0;
    }
    const StateEstimate est = reconstruct_state_detailed(p.counts);
    p.estimate = est.rho;
    p.clipped = est.clipped;
    if (external.empty() && cfg.tomography.exact) {
      p.mean_fidelity_to_truth = state_fidelity(p.estimate, in.rho);
    }
    p.fidelity_to_input = fidelity(p.estimate, in.input);
    rep.probes.push_back(std::move(p));
  }

  std::vector<DensityMatrix2> outs;
  for (const auto& p : rep.probes) outs.push_back(p.estimate);
  rep.chi = reconstruct_process(outs);
  rep.entanglement_fidelity = entanglement_fidelity(rep.chi);
  rep.entanglement_fidelity_bell = entanglement_fidelity_bell(rep.chi);
  rep.average_fidelity = average_fidelity(std::clamp(rep.entanglement_fidelity, 0.0, 1.0));
  Rng haar_rng = stream_rng(cfg.seed ^ 0x4AA2ULL, 0);
  rep.haar = haar_average_fidelity(rep.chi, cfg.tomography.haar_samples, haar_rng);
  return rep;
}

inline Json to_json(const TomographyReport& rep, const Config& cfg) {
  Json j;
  j["config"] = to_json(cfg);
  Json probes = Json::array();
  for (const auto& p : rep.probes) {
    probes.push_back({{"name", p.name},
                      {"counts", Json::array({p.counts.counts[0], p.counts.counts[1],
                                              p.counts.counts[2], p.counts.counts[3]})},
                      {"rho_true", to_json(p.truth)},
                      {"rho", to_json(p.estimate)},
                      {"clipped", p.clipped},
                      {"fidelity_to_input", round12(p.fidelity_to_input)},
                      {"mean_fidelity_to_truth", round12(p.mean_fidelity_to_truth)},
                      {"std_fidelity_to_truth", round12(p.std_fidelity_to_truth)}});
  }
  j["probes"] = std::move(probes);
  j["chi"] = to_json(rep.chi);
  j["entanglement_fidelity"] = round12(rep.entanglement_fidelity);
  j["entanglement_fidelity_bell"] = round12(rep.entanglement_fidelity_bell);
  j["average_fidelity"] = round12(rep.average_fidelity);
  j["haar_average_fidelity"] = {{"mean", round12(rep.haar.mean)},
                                {"standard_error", round12(rep.haar.standard_error)},
                                {"samples", cfg.tomography.haar_samples}};
  j["warnings"] = rep.warnings;
  return j;
}

inline TomographyReport cmd_tomo(const Config& cfg, const RunOptions& opt = {}) {
  TomographyReport rep = run_tomography(cfg, opt);
  detail::warn_all(opt, rep.warnings);
  detail::write_file(opt.out_dir / cfg.output.tomography, detail::json_text(to_json(rep, cfg)));
  detail::write_file(opt.out_dir / cfg.output.counts, counts_csv(rep.probes));
  return rep;
}

// ---------------------------------------------------------------- budget

inline std::string budget_csv(const std::vector<BudgetRow>& rows) {
  std::string out =
      "fast_switches,feed_forward,p_prep,p_route,p_parity,p_readout,p_transmission,p_total,"
      "exact_lossless_total\n";
  for (const auto& r : rows) {
    const SuccessLedger& l = r.ledger;
    out += std::string(r.flags.fast_switches ? "true" : "false") + "," +
           (r.flags.feed_forward ? "true" : "false") + "," + fmt9(l.p_prep) + "," +
           fmt9(l.p_route) + "," + fmt9(l.p_parity) + "," + fmt9(l.p_readout) + "," +
           fmt9(l.p_transmission) + "," + fmt9(l.p_total) + "," + l.exact_lossless_total.str() +
           "\n";
  }
  return out;
}

inline std::vector<BudgetRow> cmd_budget(const Config& cfg, const RunOptions& opt = {}) {
  detail::warn_all(opt, cfg.scenario.validate());
  std::vector<BudgetRow> rows = budget_table(cfg.scenario);
  detail::write_file(opt.out_dir / cfg.output.budget, budget_csv(rows));
  return rows;
}

}  // namespace paritylink
