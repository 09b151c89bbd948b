#pragma once

// Scenario files: JSON with a closed schema. Every physical quantity names its
// unit in the key. Unknown keys, wrong types and out-of-range values raise
// SchemaError carrying the line of the offending key.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "paritylink/errors.hpp"
#include "paritylink/protocol.hpp"

namespace paritylink {

using Json = nlohmann::ordered_json;

struct ScanConfig {
  double start_um = -150.0;
  double stop_um = 150.0;
  double step_um = 5.0;
};

struct TomographyConfig {
  std::uint64_t n_total = 10000;
  std::size_t repetitions = 200;
  bool exact = false;                  // expected counts instead of Poisson draws
  std::size_t haar_samples = 100000;
  std::string counts_csv;              // external counts; empty = simulate
};

struct OutputConfig {
  std::string report = "report.json";
  std::string histogram = "histogram.csv";
  std::string scan = "scan.csv";
  std::string scan_fit = "scan_fit.json";
  std::string tomography = "tomography.json";
  std::string counts = "tomography_counts.csv";
  std::string budget = "budget.csv";
};

struct Config {
  Scenario scenario;
  ScanConfig scan;
  TomographyConfig tomography;
  OutputConfig output;
  std::uint64_t seed = 1;
};

namespace detail {

// Line number of every key, addressed by JSON pointer ("/scenario/flags").
class KeyLines {
 public:
  explicit KeyLines(const std::string& text) { scan(text); }

  int line_of(const std::string& pointer) const {
    auto it = lines_.find(pointer);
    if (it != lines_.end()) return it->second;
    // Fall back to the closest enclosing key.
    const auto slash = pointer.find_last_of('/');
    if (slash == std::string::npos || slash == 0) return 1;
    return line_of(pointer.substr(0, slash));
  }

 private:
  struct Frame {
    bool object;
    std::string pointer;
    std::size_t index = 0;
    std::string pending_key;
  };

  void scan(const std::string& text) {
    std::vector<Frame> stack;
    int line = 1;
    std::string last_string;
    int last_string_line = 1;
    bool have_string = false;
    const auto child = [&](const Frame& f) {
      return f.pointer + "/" + (f.object ? f.pending_key : std::to_string(f.index));
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char ch = text[i];
      if (ch == '\n') {
        ++line;
      } else if (ch == '"') {
        std::string s;
        for (++i; i < text.size() && text[i] != '"'; ++i) {
          if (text[i] == '\\' && i + 1 < text.size()) ++i;
          if (text[i] == '\n') ++line;
          s += text[i];
        }
        last_string = std::move(s);
        last_string_line = line;
        have_string = true;
        continue;
      } else if (ch == ':') {
        if (!stack.empty() && stack.back().object && have_string) {
          stack.back().pending_key = escape(last_string);
          lines_[child(stack.back())] = last_string_line;
        }
      } else if (ch == '{' || ch == '[') {
        const std::string p = stack.empty() ? std::string() : child(stack.back());
        if (!stack.empty() && !stack.back().object) lines_.emplace(p, line);
        stack.push_back({ch == '{', p, 0, {}});
      } else if (ch == '}' || ch == ']') {
        if (!stack.empty()) stack.pop_back();
      } else if (ch == ',') {
        if (!stack.empty() && !stack.back().object) ++stack.back().index;
      }
      if (ch != ' ' && ch != '\t' && ch != '\r' && ch != '\n') have_string = false;
    }
  }

  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }

  std::map<std::string, int> lines_;
};

class SchemaReader {
 public:
  SchemaReader(std::string source, const KeyLines* lines) : source_(std::move(source)), lines_(lines) {}

  [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
    const int line = lines_ ? lines_->line_of(pointer) : 0;
    std::string where = source_;
    if (line > 0) where += ":" + std::to_string(line);
    throw SchemaError(where + ": " + (pointer.empty() ? "/" : pointer) + ": " + msg);
  }

  void expect_object(const Json& j, const std::string& ptr, const std::set<std::string>& keys) const {
    if (!j.is_object()) fail(ptr, "expected an object");
    for (const auto& [k, v] : j.items()) {
      if (!keys.contains(k)) fail(ptr + "/" + k, "unknown key '" + k + "'");
    }
  }

  double number(const Json& j, const std::string& ptr) const {
    if (!j.is_number()) fail(ptr, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(ptr, "expected a finite number");
    return v;
  }

  std::uint64_t count(const Json& j, const std::string& ptr) const {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)) {
      fail(ptr, "expected a non-negative integer");
    }
    return j.get<std::uint64_t>();
  }

  bool boolean(const Json& j, const std::string& ptr) const {
    if (!j.is_boolean()) fail(ptr, "expected true or false");
    return j.get<bool>();
  }

  std::string string(const Json& j, const std::string& ptr) const {
    if (!j.is_string()) fail(ptr, "expected a string");
    return j.get<std::string>();
  }

 private:
  std::string source_;
  const KeyLines* lines_;
};

inline const std::map<std::string, JonesVector>& named_states() {
  static const std::map<std::string, JonesVector> m{
      {"H", JonesVector::h()}, {"V", JonesVector::v()}, {"D", JonesVector::d()},
      {"A", JonesVector::dbar()}, {"L", JonesVector::l()}, {"R", JonesVector::r()}};
  return m;
}

inline Json complex_json(cplx z) { return Json::array({z.real(), z.imag()}); }

}  // namespace detail

// ---------------------------------------------------------------- parse

inline Config config_from_json(const Json& root, const std::string& source = "config",
                               const detail::KeyLines* lines = nullptr) {
  const detail::SchemaReader r(source, lines);
  Config c;
  r.expect_object(root, "", {"seed", "scenario", "scan", "tomography", "output"});
  if (root.contains("seed")) c.seed = r.count(root["seed"], "/seed");

  if (root.contains("scenario")) {
    const Json& s = root["scenario"];
    const std::string p = "/scenario";
    r.expect_object(s, p,
                    {"inputs", "delta_t_a_ns", "delta_t_b_ns", "tau_ns", "l_c_um", "v_m",
                     "window_ns", "trials", "analytic", "scheme", "phase_convention", "flags",
                     "noise", "transmittance"});
    Scenario& sc = c.scenario;
    if (s.contains("inputs")) {
      const Json& in = s["inputs"];
      if (!in.is_array() || in.empty()) r.fail(p + "/inputs", "expected a non-empty array");
      sc.inputs.clear();
      for (std::size_t i = 0; i < in.size(); ++i) {
        const std::string ip = p + "/inputs/" + std::to_string(i);
        const Json& e = in[i];
        if (e.is_string()) {
          const std::string name = e.get<std::string>();
          auto it = detail::named_states().find(name);
          if (it == detail::named_states().end()) {
            r.fail(ip, "unknown state '" + name + "' (use H, V, D, A, L, R or an object)");
          }
          sc.inputs.push_back({name, it->second});
          continue;
        }
        r.expect_object(e, ip, {"name", "alpha", "beta"});
        const auto amp = [&](const char* key) -> cplx {
          if (!e.contains(key)) r.fail(ip, std::string("missing key '") + key + "'");
          const Json& a = e[key];
          const std::string ap = ip + "/" + key;
          if (a.is_number()) return r.number(a, ap);
          if (!a.is_array() || a.size() != 2) r.fail(ap, "expected a number or [re, im]");
          return {r.number(a[0], ap), r.number(a[1], ap)};
        };
        const cplx alpha = amp("alpha"), beta = amp("beta");
        const std::string name =
            e.contains("name") ? r.string(e["name"], ip + "/name") : "input" + std::to_string(i);
        try {
          sc.inputs.push_back({name, JonesVector(alpha, beta)});
        } catch (const ValidationError& err) {
          r.fail(ip, err.what());
        }
      }
    }
    const auto num = [&](const char* key, double& dst) {
      if (s.contains(key)) dst = r.number(s[key], p + "/" + key);
    };
    num("delta_t_a_ns", sc.delta_t_a_ns);
    num("delta_t_b_ns", sc.delta_t_b_ns);
    num("tau_ns", sc.tau_ns);
    num("l_c_um", sc.kernel.coherence_length_um);
    num("v_m", sc.kernel.distinguishability);
    num("window_ns", sc.window_ns);
    if (s.contains("trials")) sc.trials = r.count(s["trials"], p + "/trials");
    if (s.contains("analytic")) sc.analytic = r.boolean(s["analytic"], p + "/analytic");
    if (s.contains("scheme")) {
      const std::string v = r.string(s["scheme"], p + "/scheme");
      if (v == "ancilla") sc.scheme = Scheme::ancilla;
      else if (v == "direct") sc.scheme = Scheme::direct;
      else r.fail(p + "/scheme", "expected \"ancilla\" or \"direct\", got \"" + v + "\"");
    }
    if (s.contains("phase_convention")) {
      const std::string v = r.string(s["phase_convention"], p + "/phase_convention");
      if (v == "quadrature") sc.convention = PhaseConvention::quadrature;
      else if (v == "real") sc.convention = PhaseConvention::real;
      else r.fail(p + "/phase_convention", "expected \"quadrature\" or \"real\", got \"" + v + "\"");
    }
    if (s.contains("flags")) {
      const Json& f = s["flags"];
      r.expect_object(f, p + "/flags", {"fast_switches", "feed_forward"});
      if (f.contains("fast_switches")) {
        sc.flags.fast_switches = r.boolean(f["fast_switches"], p + "/flags/fast_switches");
      }
      if (f.contains("feed_forward")) {
        sc.flags.feed_forward = r.boolean(f["feed_forward"], p + "/flags/feed_forward");
      }
    }
    if (s.contains("noise")) {
      const Json& n = s["noise"];
      const std::string np = p + "/noise";
      r.expect_object(n, np, {"model", "tau_c_ns", "sigma_rad"});
      if (n.contains("model")) {
        const std::string v = r.string(n["model"], np + "/model");
        if (v == "iid_uniform") sc.noise.kind = NoiseKind::iid_uniform;
        else if (v == "ornstein_uhlenbeck") sc.noise.kind = NoiseKind::ornstein_uhlenbeck;
        else r.fail(np + "/model", "expected \"iid_uniform\" or \"ornstein_uhlenbeck\", got \"" + v + "\"");
      }
      if (n.contains("tau_c_ns")) {
        sc.noise.correlation_time_ns = n["tau_c_ns"].is_null()
                                           ? std::numeric_limits<double>::infinity()
                                           : r.number(n["tau_c_ns"], np + "/tau_c_ns");
      }
      if (n.contains("sigma_rad")) sc.noise.sigma_rad = r.number(n["sigma_rad"], np + "/sigma_rad");
    }
    if (s.contains("transmittance")) {
      const Json& t = s["transmittance"];
      const std::string tp = p + "/transmittance";
      r.expect_object(t, tp, lossy_paths());
      for (const auto& [k, v] : t.items()) sc.transmittance[k] = r.number(v, tp + "/" + k);
    }
  }

  if (root.contains("scan")) {
    const Json& s = root["scan"];
    r.expect_object(s, "/scan", {"start_um", "stop_um", "step_um"});
    if (s.contains("start_um")) c.scan.start_um = r.number(s["start_um"], "/scan/start_um");
    if (s.contains("stop_um")) c.scan.stop_um = r.number(s["stop_um"], "/scan/stop_um");
    if (s.contains("step_um")) c.scan.step_um = r.number(s["step_um"], "/scan/step_um");
  }

  if (root.contains("tomography")) {
    const Json& t = root["tomography"];
    const std::string tp = "/tomography";
    r.expect_object(t, tp, {"n_total", "repetitions", "exact", "haar_samples", "counts_csv"});
    if (t.contains("n_total")) c.tomography.n_total = r.count(t["n_total"], tp + "/n_total");
    if (t.contains("repetitions")) {
      c.tomography.repetitions = r.count(t["repetitions"], tp + "/repetitions");
    }
    if (t.contains("exact")) c.tomography.exact = r.boolean(t["exact"], tp + "/exact");
    if (t.contains("haar_samples")) {
      c.tomography.haar_samples = r.count(t["haar_samples"], tp + "/haar_samples");
    }
    if (t.contains("counts_csv")) c.tomography.counts_csv = r.string(t["counts_csv"], tp + "/counts_csv");
  }

  if (root.contains("output")) {
    const Json& o = root["output"];
    r.expect_object(o, "/output",
                    {"report", "histogram", "scan", "scan_fit", "tomography", "counts", "budget"});
    const auto name = [&](const char* key, std::string& dst) {
      if (!o.contains(key)) return;
      dst = r.string(o[key], std::string("/output/") + key);
      if (dst.empty()) r.fail(std::string("/output/") + key, "file name must not be empty");
    };
    name("report", c.output.report);
    name("histogram", c.output.histogram);
    name("scan", c.output.scan);
    name("scan_fit", c.output.scan_fit);
    name("tomography", c.output.tomography);
    name("counts", c.output.counts);
    name("budget", c.output.budget);
  }

  c.scenario.noise.seed = c.seed;
  try {
    c.scenario.validate();
  } catch (const ValidationError& err) {
    r.fail("/scenario", err.what());
  }
  if (c.tomography.n_total < 1) r.fail("/tomography/n_total", "must be at least 1");
  if (c.tomography.repetitions < 1) r.fail("/tomography/repetitions", "must be at least 1");
  if (c.tomography.haar_samples < 1) r.fail("/tomography/haar_samples", "must be at least 1");
  return c;
}

inline Config parse_config(const std::string& text, const std::string& source = "config") {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i) line += text[i] == '\n';
    throw SchemaError(source + ":" + std::to_string(line) + ": malformed JSON: " + e.what());
  }
  const detail::KeyLines lines(text);
  return config_from_json(root, source, &lines);
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

// ---------------------------------------------------------------- emit

inline Json to_json(const JonesVector& v) {
  return {{"alpha", detail::complex_json(v.alpha())}, {"beta", detail::complex_json(v.beta())}};
}

inline Json to_json(const Config& c) {
  const Scenario& s = c.scenario;
  Json inputs = Json::array();
  for (const auto& in : s.inputs) {
    auto it = detail::named_states().find(in.name);
    if (it != detail::named_states().end() && it->second.alpha() == in.state.alpha() &&
        it->second.beta() == in.state.beta()) {
      inputs.push_back(in.name);
    } else {
      Json e = to_json(in.state);
      e["name"] = in.name;
      inputs.push_back(std::move(e));
    }
  }
  Json noise = {{"model", s.noise.kind == NoiseKind::iid_uniform ? "iid_uniform" : "ornstein_uhlenbeck"}};
  noise["tau_c_ns"] = std::isfinite(s.noise.correlation_time_ns) ? Json(s.noise.correlation_time_ns)
                                                                 : Json(nullptr);
  noise["sigma_rad"] = s.noise.sigma_rad;
  Json trans = Json::object();
  for (const auto& [k, v] : s.transmittance) trans[k] = v;

  Json j;
  j["seed"] = c.seed;
  j["scenario"] = {
      {"inputs", inputs},
      {"delta_t_a_ns", s.delta_t_a_ns},
      {"delta_t_b_ns", s.delta_t_b_ns},
      {"tau_ns", s.tau_ns},
      {"l_c_um", s.kernel.coherence_length_um},
      {"v_m", s.kernel.distinguishability},
      {"window_ns", s.window_ns},
      {"trials", s.trials},
      {"analytic", s.analytic},
      {"scheme", s.scheme == Scheme::ancilla ? "ancilla" : "direct"},
      {"phase_convention", s.convention == PhaseConvention::quadrature ? "quadrature" : "real"},
      {"flags", {{"fast_switches", s.flags.fast_switches}, {"feed_forward", s.flags.feed_forward}}},
      {"noise", noise},
      {"transmittance", trans}};
  j["scan"] = {{"start_um", c.scan.start_um}, {"stop_um", c.scan.stop_um}, {"step_um", c.scan.step_um}};
  j["tomography"] = {{"n_total", c.tomography.n_total},
                     {"repetitions", c.tomography.repetitions},
                     {"exact", c.tomography.exact},
                     {"haar_samples", c.tomography.haar_samples},
                     {"counts_csv", c.tomography.counts_csv}};
  j["output"] = {{"report", c.output.report},         {"histogram", c.output.histogram},
                 {"scan", c.output.scan},             {"scan_fit", c.output.scan_fit},
                 {"tomography", c.output.tomography}, {"counts", c.output.counts},
                 {"budget", c.output.budget}};
  return j;
}

}  // namespace paritylink
