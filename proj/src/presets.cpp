// Experiment config documents: JSON schema parsing and the embedded presets.
#include <map>
#include <set>

#include <json.hpp>

#include "ifk/bench.hpp"
#include "ifk/errors.hpp"
#include "ifk/io.hpp"

namespace ifk {

namespace {

using json = nlohmann::json;

const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> docs = {
      {"kf-wodf", R"({
  "model": "linear3:without-df",
  "forward": "kf-wodf",
  "inverse": "ikf-wodf",
  "steps": 100,
  "runs": 200,
  "seed": 42,
  "x0": [1, 1, 1],
  "x_hat0": [0, 0, 0],
  "Sigma0": 1,
  "u_hat0": [0],
  "x_dhat0": "x0",
  "Sigma_bar0": 5,
  "input": {"before": [50], "after": [-50], "last_before": 50}
})"},
      {"kf-wdf", R"({
  "model": "linear3:with-df",
  "forward": "kf-wdf",
  "inverse": "ikf-wdf",
  "steps": 100,
  "runs": 200,
  "seed": 42,
  "x0": [1, 1, 1],
  "x_hat0": [0, 0, 0],
  "Sigma0": 1,
  "u_hat0": [10],
  "Sigma_u0": 10,
  "Sigma_xu0": [[0], [0], [0]],
  "x_dhat0": "x0",
  "u_dhat0": "u0",
  "Sigma_bar0": 5,
  "input": {"before": [50], "after": [-50], "last_before": 50}
})"},
      {"ekf", R"({
  "model": "fm:no-input",
  "forward": "ekf",
  "inverse": "iekf",
  "steps": 100,
  "runs": 200,
  "seed": 42,
  "x0": [{"normal": [0, 1]}, {"uniform": [-3.141592653589793, 3.141592653589793]}],
  "x_hat0": [{"normal": [0, 1]}, {"uniform": [-3.141592653589793, 3.141592653589793]}],
  "Sigma0": 10,
  "x_dhat0": [{"normal": [0, 1]}, {"uniform": [-3.141592653589793, 3.141592653589793]}],
  "Sigma_bar0": 5,
  "replica_Sigma0": 5
})"},
      {"ekf-wodf", R"({
  "model": "fm:without-df",
  "forward": "ekf-wodf",
  "inverse": "iekf-wodf",
  "steps": 100,
  "runs": 200,
  "seed": 42,
  "x0": [{"normal": [0, 1]}, {"uniform": [-3.141592653589793, 3.141592653589793]}],
  "x_hat0": [{"normal": [0, 1]}, {"uniform": [-3.141592653589793, 3.141592653589793]}],
  "Sigma0": 10,
  "u_hat0": [0],
  "x_dhat0": "x0",
  "u_dhat0": "u0",
  "Sigma_bar0": 15,
  "input": {"before": [0.7853981633974483], "after": [-0.7853981633974483], "last_before": 50}
})"},
      {"ekf-wdf", R"({
  "model": "fm:with-df",
  "forward": "ekf-wdf",
  "inverse": "iekf-wdf",
  "steps": 100,
  "runs": 200,
  "seed": 42,
  "x0": [{"normal": [0, 1]}, {"uniform": [-3.141592653589793, 3.141592653589793]}],
  "x_hat0": [{"normal": [0, 1]}, {"uniform": [-3.141592653589793, 3.141592653589793]}],
  "Sigma0": 10,
  "u_hat0": [0],
  "x_dhat0": "x0",
  "u_dhat0": "u0",
  "Sigma_bar0": 15,
  "input": {"before": [0.7853981633974483], "after": [-0.7853981633974483], "last_before": 50}
})"},
  };
  return docs;
}

const std::vector<std::string> kKeys = {
    "model",          "forward",          "inverse",   "steps",      "runs",
    "seed",           "x0",               "x_hat0",    "Sigma0",     "u_hat0",
    "Sigma_u0",       "Sigma_xu0",        "x_dhat0",   "u_dhat0",    "Sigma_bar0",
    "replica_Sigma0", "replica_Sigma_u0", "J_bar0",    "input",      "noise",
    "enlarge",        "jacobians",        "threads",   "keep_traces", "out_csv",
    "out_svg",
};

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::ConfigError, "config key '" + key + "': " + what);
}

double number(const json& j, const std::string& key) {
  if (!j.is_number()) bad(key, "expected a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& key, int min_value) {
  if (!j.is_number_integer()) bad(key, "expected an integer");
  const long long v = j.get<long long>();
  if (v < min_value || v > 100000000) bad(key, "out of range");
  return static_cast<int>(v);
}

Vec vector_of(const json& j, const std::string& key) {
  if (!j.is_array()) bad(key, "expected an array of numbers");
  Vec out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) out(i) = number(j[i], key);
  return out;
}

// A number s gives s I (square only), a flat array a diagonal, nested arrays a full matrix.
struct MatrixDoc {
  enum class Kind { Scaled, Diagonal, Full } kind = Kind::Scaled;
  double scale = 0.0;
  Vec diag;
  Mat full;
};

MatrixDoc matrix_doc(const json& j, const std::string& key) {
  MatrixDoc d;
  d.kind = MatrixDoc::Kind::Scaled;
  if (j.is_number()) {
    d.scale = j.get<double>();
    return d;
  }
  if (!j.is_array() || j.empty()) bad(key, "expected a number or a non-empty array");
  if (j[0].is_number()) {
    d.kind = MatrixDoc::Kind::Diagonal;
    d.diag = vector_of(j, key);
    return d;
  }
  d.kind = MatrixDoc::Kind::Full;
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  d.full.resize(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) bad(key, "rows must be arrays of equal length");
    for (std::size_t c = 0; c < cols; ++c) d.full(r, c) = number(j[r][c], key);
  }
  return d;
}

Mat resolve(const MatrixDoc& d, Eigen::Index rows, Eigen::Index cols, const std::string& key) {
  switch (d.kind) {
    case MatrixDoc::Kind::Scaled:
      if (rows != cols && d.scale != 0.0) bad(key, "a scalar only describes square matrices");
      return d.scale * Mat::Identity(rows, cols);
    case MatrixDoc::Kind::Diagonal:
      if (rows != cols || d.diag.size() != rows) {
        bad(key, "expected " + std::to_string(rows) + " diagonal entries");
      }
      return d.diag.asDiagonal();
    case MatrixDoc::Kind::Full:
      if (d.full.rows() != rows || d.full.cols() != cols) {
        bad(key, "expected a " + std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
      }
      return d.full;
  }
  return Mat();
}

VectorSpec vector_spec(const json& j, const std::string& key) {
  if (!j.is_array()) bad(key, "expected an array");
  VectorSpec out;
  for (const auto& e : j) {
    ComponentSpec c;
    if (e.is_number()) {
      c.a = e.get<double>();
    } else if (e.is_object() && e.size() == 1) {
      const auto it = e.begin();
      if (it.key() == "normal") {
        c.kind = ComponentSpec::Kind::Normal;
      } else if (it.key() == "uniform") {
        c.kind = ComponentSpec::Kind::Uniform;
      } else {
        bad(key, "unknown distribution '" + it.key() + "'");
      }
      const Vec ab = vector_of(it.value(), key);
      if (ab.size() != 2) bad(key, "distributions take two parameters");
      c.a = ab(0);
      c.b = ab(1);
      if (c.kind == ComponentSpec::Kind::Normal && c.b < 0.0) bad(key, "negative stddev");
      if (c.kind == ComponentSpec::Kind::Uniform && c.b < c.a) bad(key, "empty interval");
    } else {
      bad(key, "entries must be numbers or {\"normal\"|\"uniform\": [a, b]}");
    }
    out.push_back(c);
  }
  return out;
}

InitSpec init_spec(const json& j, const std::string& key) {
  InitSpec s;
  if (j.is_string()) {
    const std::string v = j.get<std::string>();
    if (v == "x0") {
      s.source = InitSpec::Source::TrueState;
    } else if (v == "x_hat0") {
      s.source = InitSpec::Source::ForwardEstimate;
    } else if (v == "u0") {
      s.source = InitSpec::Source::TrueInput;
    } else {
      bad(key, "unknown reference '" + v + "' (x0, x_hat0 or u0)");
    }
    return s;
  }
  s.values = vector_spec(j, key);
  return s;
}

std::string text(const json& j, const std::string& key) {
  if (!j.is_string()) bad(key, "expected a string");
  return j.get<std::string>();
}

}  // namespace

std::vector<std::string> config_keys() { return kKeys; }

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, doc] : presets()) out.push_back(name);
  return out;
}

const std::string& preset_document(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

ExperimentConfig preset_config(const std::string& name) {
  return parse_config(preset_document(name));
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  const std::set<std::string> known(kKeys.begin(), kKeys.end());
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) bad(key, "unknown key");
  }
  for (const char* req : {"model", "forward", "x0", "x_hat0", "Sigma0", "x_dhat0", "Sigma_bar0"}) {
    if (!doc.contains(req)) bad(req, "missing");
  }

  ExperimentConfig cfg;
  cfg.model = text(doc["model"], "model");
  SystemModel model;
  try {
    model = builtin_model(cfg.model);
  } catch (const Error& e) {
    bad("model", e.what());
  }
  try {
    cfg.forward = parse_forward_kind(text(doc["forward"], "forward"));
    cfg.inverse = doc.contains("inverse") ? parse_inverse_kind(text(doc["inverse"], "inverse"))
                                          : inverse_kind_for(cfg.forward);
  } catch (const Error& e) {
    bad(doc.contains("inverse") ? "inverse" : "forward", e.what());
  }
  if (doc.contains("steps")) cfg.steps = integer(doc["steps"], "steps", 1);
  if (doc.contains("runs")) cfg.runs = integer(doc["runs"], "runs", 1);
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer()) {
      bad("seed", "expected a non-negative integer");
    }
    if (doc["seed"].is_number_integer() && doc["seed"].get<long long>() < 0) {
      bad("seed", "expected a non-negative integer");
    }
    cfg.seed = doc["seed"].get<std::uint64_t>();
  }

  const int n = model.n;
  const int m = model.m;
  const int N = n + (is_augmented(cfg.inverse) ? m : 0);
  cfg.x0 = vector_spec(doc["x0"], "x0");
  cfg.x_hat0 = vector_spec(doc["x_hat0"], "x_hat0");
  if (static_cast<int>(cfg.x0.size()) != n) bad("x0", "expected " + std::to_string(n) + " entries");
  if (static_cast<int>(cfg.x_hat0.size()) != n) {
    bad("x_hat0", "expected " + std::to_string(n) + " entries");
  }

  // Noise overrides come first so they can be sized against the model.
  if (doc.contains("noise")) {
    const json& nz = doc["noise"];
    if (!nz.is_object()) bad("noise", "expected an object");
    for (const auto& [key, value] : nz.items()) {
      const std::string full = "noise." + key;
      if (key == "Q") {
        cfg.Q = resolve(matrix_doc(value, full), n, n, full);
      } else if (key == "R") {
        cfg.R = resolve(matrix_doc(value, full), model.p, model.p, full);
      } else if (key == "Sigma_eps") {
        cfg.Sigma_eps = resolve(matrix_doc(value, full), model.na, model.na, full);
      } else {
        bad(full, "unknown key");
      }
    }
  }
  cfg.Sigma0 = resolve(matrix_doc(doc["Sigma0"], "Sigma0"), n, n, "Sigma0");
  if (doc.contains("u_hat0")) {
    cfg.u_hat0 = vector_spec(doc["u_hat0"], "u_hat0");
    if (static_cast<int>(cfg.u_hat0.size()) != m) {
      bad("u_hat0", "expected " + std::to_string(m) + " entries");
    }
  }
  if (doc.contains("Sigma_u0")) {
    cfg.Sigma_u0 = resolve(matrix_doc(doc["Sigma_u0"], "Sigma_u0"), m, m, "Sigma_u0");
  }
  if (doc.contains("Sigma_xu0")) {
    cfg.Sigma_xu0 = resolve(matrix_doc(doc["Sigma_xu0"], "Sigma_xu0"), n, m, "Sigma_xu0");
  }
  cfg.x_dhat0 = init_spec(doc["x_dhat0"], "x_dhat0");
  if (cfg.x_dhat0.source == InitSpec::Source::TrueInput) bad("x_dhat0", "u0 is not a state");
  if (cfg.x_dhat0.source == InitSpec::Source::Explicit && static_cast<int>(cfg.x_dhat0.values.size()) != n) {
    bad("x_dhat0", "expected " + std::to_string(n) + " entries");
  }
  if (N > n) {
    if (!doc.contains("u_dhat0")) bad("u_dhat0", "missing (required by " + std::string(to_string(cfg.inverse)) + ")");
    cfg.u_dhat0 = init_spec(doc["u_dhat0"], "u_dhat0");
    if (cfg.u_dhat0.source == InitSpec::Source::TrueState ||
        cfg.u_dhat0.source == InitSpec::Source::ForwardEstimate) {
      bad("u_dhat0", "must be u0 or explicit values");
    }
    if (cfg.u_dhat0.source == InitSpec::Source::Explicit &&
        static_cast<int>(cfg.u_dhat0.values.size()) != m) {
      bad("u_dhat0", "expected " + std::to_string(m) + " entries");
    }
  } else if (doc.contains("u_dhat0")) {
    bad("u_dhat0", std::string(to_string(cfg.inverse)) + " has no input slot");
  }
  cfg.Sigma_bar0 = resolve(matrix_doc(doc["Sigma_bar0"], "Sigma_bar0"), N, N, "Sigma_bar0");
  if (doc.contains("replica_Sigma0")) {
    cfg.replica_Sigma0 = resolve(matrix_doc(doc["replica_Sigma0"], "replica_Sigma0"), n, n,
                                 "replica_Sigma0");
  }
  if (doc.contains("replica_Sigma_u0")) {
    cfg.replica_Sigma_u0 = resolve(matrix_doc(doc["replica_Sigma_u0"], "replica_Sigma_u0"), m, m,
                                   "replica_Sigma_u0");
  }
  if (doc.contains("J_bar0")) cfg.J_bar0 = resolve(matrix_doc(doc["J_bar0"], "J_bar0"), N, N, "J_bar0");

  if (doc.contains("input")) {
    const json& in = doc["input"];
    if (!in.is_object()) bad("input", "expected an object");
    if (in.contains("constant")) {
      if (in.size() != 1) bad("input", "constant takes no other keys");
      cfg.input.kind = InputSpec::Kind::Constant;
      cfg.input.before = vector_of(in["constant"], "input.constant");
    } else {
      for (const char* k : {"before", "after", "last_before"}) {
        if (!in.contains(k)) bad(std::string("input.") + k, "missing");
      }
      if (in.size() != 3) bad("input", "expected before, after and last_before");
      cfg.input.kind = InputSpec::Kind::Step;
      cfg.input.before = vector_of(in["before"], "input.before");
      cfg.input.after = vector_of(in["after"], "input.after");
      cfg.input.last_before = integer(in["last_before"], "input.last_before", 0);
      if (cfg.input.after.size() != m) bad("input.after", "expected " + std::to_string(m) + " entries");
    }
    if (cfg.input.before.size() != m) bad("input", "expected " + std::to_string(m) + " entries");
  } else if (m > 0) {
    bad("input", "missing (model has an unknown input)");
  }

  if (doc.contains("enlarge")) {
    const json& e = doc["enlarge"];
    if (!e.is_object()) bad("enlarge", "expected an object");
    for (const auto& [key, value] : e.items()) {
      const std::string full = "enlarge." + key;
      const double v = number(value, full);
      if (v < 0.0) bad(full, "must be non-negative");
      if (key == "delta_Q") {
        cfg.enlarge.delta_Q = v;
      } else if (key == "delta_R") {
        cfg.enlarge.delta_R = v;
      } else if (key == "delta_Q_bar") {
        cfg.enlarge.delta_Q_bar = v;
      } else if (key == "delta_eps") {
        cfg.enlarge.delta_eps = v;
      } else {
        bad(full, "unknown key");
      }
    }
  }
  if (doc.contains("jacobians")) {
    const std::string j = text(doc["jacobians"], "jacobians");
    if (j == "analytic") {
      cfg.jacobians = JacobianMode::Analytic;
    } else if (j == "finite-difference") {
      cfg.jacobians = JacobianMode::FiniteDifference;
    } else {
      bad("jacobians", "expected analytic or finite-difference");
    }
  }
  if (doc.contains("threads")) cfg.threads = integer(doc["threads"], "threads", 0);
  if (doc.contains("keep_traces")) {
    if (!doc["keep_traces"].is_boolean()) bad("keep_traces", "expected true or false");
    cfg.keep_traces = doc["keep_traces"].get<bool>();
  }
  if (doc.contains("out_csv")) cfg.out_csv = text(doc["out_csv"], "out_csv");
  if (doc.contains("out_svg")) cfg.out_svg = text(doc["out_svg"], "out_svg");

  validate_config(cfg);
  return cfg;
}

}  // namespace ifk
