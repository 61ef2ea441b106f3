#include "ifk/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <sstream>
#include <thread>

#include "ifk/errors.hpp"
#include "ifk/io.hpp"

namespace ifk {

namespace {

Variant variant_for(ForwardKind kind) {
  switch (kind) {
    case ForwardKind::KFWodf:
    case ForwardKind::EKFWodf:
      return Variant::WithoutDf;
    case ForwardKind::KFWdf:
    case ForwardKind::EKFWdf:
      return Variant::WithDf;
    default:
      return Variant::NoInput;
  }
}

Vec draw(const VectorSpec& spec, Rng& rng) {
  Vec out(static_cast<Eigen::Index>(spec.size()));
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const ComponentSpec& c = spec[i];
    switch (c.kind) {
      case ComponentSpec::Kind::Fixed: out(i) = c.a; break;
      case ComponentSpec::Kind::Normal: out(i) = rng.normal(c.a, c.b); break;
      case ComponentSpec::Kind::Uniform: out(i) = rng.uniform(c.a, c.b); break;
    }
  }
  return out;
}

InputSchedule schedule_of(const ExperimentConfig& cfg, const SystemModel& model) {
  switch (cfg.input.kind) {
    case InputSpec::Kind::Constant: return constant_schedule(cfg.input.before);
    case InputSpec::Kind::Step:
      return step_schedule(cfg.input.before, cfg.input.after, cfg.input.last_before);
    case InputSpec::Kind::None: break;
  }
  return constant_schedule(model.zero_input());
}

SystemModel filter_model(const ExperimentConfig& cfg, const SystemModel& truth) {
  SystemModel m = truth;
  m.Q += cfg.enlarge.delta_Q * Mat::Identity(m.n, m.n);
  m.R += cfg.enlarge.delta_R * Mat::Identity(m.p, m.p);
  m.Sigma_eps += cfg.enlarge.delta_eps * Mat::Identity(m.na, m.na);
  return m;
}

ForwardGains gains_of(const ForwardState& s) {
  ForwardGains g;
  g.F = s.F;
  g.B = s.B;
  g.H = s.H;
  g.D = s.D;
  g.x_pred = s.x_pred;
  g.Sigma_pred = s.Sigma_pred;
  g.S = s.S;
  g.K_x = s.K_x;
  g.K_u = s.K_u;
  g.Sigma_x = s.Sigma_x;
  g.Sigma_u = s.Sigma_u;
  g.Sigma_xu = s.Sigma_xu;
  return g;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

// Information of the inverse filter's state along the true forward run:
// the transition is linearized at the forward estimates with the forward
// filter's own gains, and its noise is treated as additive Gaussian.
std::vector<InfoMatrix> inverse_info_series(const ExperimentConfig& cfg, const SystemModel& model,
                                            const Trajectory& truth,
                                            const std::vector<ForwardState>& fwd,
                                            const Mat& J0) {
  const int n = model.n;
  const bool aug = is_augmented(cfg.inverse);
  const int N = n + (aug ? model.m : 0);
  const bool wodf = cfg.inverse == InverseKind::IEKFWodf;
  auto point = [&](int k) -> Vec {
    if (!aug) return fwd[k].x_hat;
    if (wodf) return concat(fwd[k].x_hat, fwd[std::max(k - 1, 0)].u_hat);
    return concat(fwd[k].x_hat, fwd[k].u_hat);
  };
  std::vector<InfoMatrix> out;
  out.push_back({J0, 0});
  for (int k = 0; k + 1 < static_cast<int>(fwd.size()); ++k) {
    std::optional<PreviousGains> prev;
    if (wodf && k > 0) prev = PreviousGains{fwd[k].K_u, fwd[k].H * fwd[k].B};
    const Vec x_prev = fwd[std::max(k - 1, 0)].x_hat;
    const Vec u_next = model.m > 0 ? truth.u[k + 1] : Vec();
    const InverseLinearization lin =
        inverse_linearization(cfg.inverse, model, gains_of(fwd[k + 1]), point(k), x_prev, prev,
                              truth.x[k], truth.x[k + 1], u_next, cfg.jacobians);
    Mat G = Mat::Zero(model.na, N);
    G.leftCols(n) = model.G_at(fwd[k + 1].x_hat);
    out.push_back(info_step_additive(out.back(), lin.Fz, G, enlarge_if_singular(lin.Q_bar),
                                     model.Sigma_eps));
  }
  return out;
}

// Numeric breakdown of a filter inside one run; the run is excluded and counted.
bool is_divergence(const Error& e) {
  switch (e.code()) {
    case ErrorCode::NonFiniteState:
    case ErrorCode::NonFiniteEvaluation:
    case ErrorCode::SingularInnovation:
    case ErrorCode::InputCovSingular:
      return true;
    default:
      return false;
  }
}

// Message of an Error without its "Code: " prefix.
std::string bare_message(const Error& e) {
  const std::string w = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
}

struct RunSummary {
  std::vector<double> sq_fwd, sq_inv, tr_fwd, tr_inv;
  std::optional<RunTrace> trace;
};

RunSummary summarize(const SystemModel& model, RunTrace&& t, bool keep) {
  const int K = t.truth.steps();
  const int n = model.n;
  RunSummary s;
  for (int k = 1; k <= K; ++k) {
    s.sq_fwd.push_back(model.state_difference(t.truth.x[k], t.fwd[k].x_hat).squaredNorm());
    s.sq_inv.push_back(model.state_difference(t.fwd[k].x_hat, t.inv[k].x_dhat).squaredNorm());
    s.tr_fwd.push_back(inverse_trace(t.J_fwd[k].J, n));
    s.tr_inv.push_back(inverse_trace(t.J_inv[k].J, n));
  }
  if (keep) s.trace = std::move(t);
  return s;
}

std::vector<double> mean_root(const std::vector<std::vector<double>>& per_run, int n) {
  const std::size_t K = per_run.front().size();
  std::vector<double> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (const auto& r : per_run) sum += r[k];
    out[k] = std::sqrt(sum / static_cast<double>(per_run.size()) / n);
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (int x : v) out += (out.empty() ? "" : ";") + std::to_string(x);
  return out;
}

}  // namespace

SystemModel config_model(const ExperimentConfig& cfg) {
  SystemModel model = builtin_model(cfg.model);
  if (cfg.Q.size() > 0) model.Q = cfg.Q;
  if (cfg.R.size() > 0) model.R = cfg.R;
  if (cfg.Sigma_eps.size() > 0) model.Sigma_eps = cfg.Sigma_eps;
  model.validate();
  return model;
}

void validate_config(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& key, const std::string& what) {
    throw Error(ErrorCode::ConfigError, "config key '" + key + "': " + what);
  };
  if (cfg.runs < 1) fail("runs", "must be at least 1");
  if (cfg.steps < 1) fail("steps", "must be at least 1");
  if (cfg.forward == ForwardKind::EKFOneStep || cfg.inverse == InverseKind::IEKFOneStep) {
    fail("forward", "the one-step filters are not supported by the experiment harness");
  }
  if (forward_kind_for(cfg.inverse) != cfg.forward) {
    fail("inverse", std::string(to_string(cfg.inverse)) + " does not invert " +
                        std::string(to_string(cfg.forward)));
  }
  SystemModel model;
  try {
    model = config_model(cfg);
  } catch (const Error& e) {
    fail("model", bare_message(e));
  }
  if (model.variant != variant_for(cfg.forward)) {
    fail("forward", std::string(to_string(cfg.forward)) + " needs a " +
                        std::string(to_string(variant_for(cfg.forward))) + " model, got " +
                        cfg.model);
  }
  const bool linear_kind = cfg.forward == ForwardKind::KF || cfg.forward == ForwardKind::KFWodf ||
                           cfg.forward == ForwardKind::KFWdf;
  if (linear_kind && !model.linear) fail("forward", "needs a linear model");
  const int N = model.n + (is_augmented(cfg.inverse) ? model.m : 0);
  if (static_cast<int>(cfg.x0.size()) != model.n) fail("x0", "wrong size");
  if (static_cast<int>(cfg.x_hat0.size()) != model.n) fail("x_hat0", "wrong size");
  if (cfg.Sigma0.rows() != model.n || !psd_check(cfg.Sigma0, 1e-8)) {
    fail("Sigma0", "must be a symmetric PSD n x n matrix");
  }
  if (cfg.Sigma_bar0.rows() != N || !psd_check(cfg.Sigma_bar0, 1e-8)) {
    fail("Sigma_bar0", "must be a symmetric PSD matrix of the inverse state size");
  }
  if (cfg.replica_Sigma0.size() > 0 && !psd_check(cfg.replica_Sigma0, 1e-8)) {
    fail("replica_Sigma0", "must be symmetric PSD");
  }
  if (model.m > 0 && cfg.input.kind == InputSpec::Kind::None) fail("input", "missing");
  if (cfg.J_bar0.size() > 0 && (cfg.J_bar0.rows() != N || !psd_check(cfg.J_bar0, 1e-8))) {
    fail("J_bar0", "must be a symmetric PSD matrix of the inverse state size");
  }
}

namespace {

template <class F>
void at_step(const char* stage, int k, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(stage) + " step " + std::to_string(k + 1) + ": " + bare_message(e));
  }
}

}  // namespace

RunTrace simulate_run(const ExperimentConfig& cfg, const SystemModel& truth_model, int run) {
  const SystemModel fm = filter_model(cfg, truth_model);
  const int K = cfg.steps;
  Rng rng(cfg.seed, static_cast<std::uint64_t>(run));

  Vec x0 = draw(cfg.x0, rng);
  truth_model.wrap_state(x0);
  const Vec x_hat0 = draw(cfg.x_hat0, rng);
  const Vec u_hat0 = cfg.u_hat0.empty() ? truth_model.zero_input() : draw(cfg.u_hat0, rng);
  Vec x_dhat0;
  switch (cfg.x_dhat0.source) {
    case InitSpec::Source::TrueState: x_dhat0 = x0; break;
    case InitSpec::Source::ForwardEstimate: x_dhat0 = x_hat0; break;
    default: x_dhat0 = draw(cfg.x_dhat0.values, rng); break;
  }
  const bool aug = is_augmented(cfg.inverse);
  Vec u_dhat0;
  if (aug && cfg.u_dhat0.source == InitSpec::Source::Explicit) u_dhat0 = draw(cfg.u_dhat0.values, rng);

  RunTrace t;
  t.truth = simulate_trajectory(truth_model, x0, schedule_of(cfg, truth_model), K, rng);
  if (aug && cfg.u_dhat0.source == InitSpec::Source::TrueInput) u_dhat0 = t.truth.u[0];

  t.fwd.push_back(make_forward_state(cfg.forward, fm, x_hat0, cfg.Sigma0, u_hat0, cfg.Sigma_u0,
                                     cfg.Sigma_xu0));
  for (int k = 0; k < K; ++k) {
    at_step("forward", k, [&] {
      t.fwd.push_back(forward_step(cfg.forward, fm, t.fwd.back(), t.truth.y[k + 1]));
    });
  }

  t.a.emplace_back();
  for (int k = 1; k <= K; ++k) {
    t.a.push_back(truth_model.g(t.fwd[k].x_hat) + rng.gaussian(truth_model.Sigma_eps));
  }

  const Mat replica_Sigma0 = cfg.replica_Sigma0.size() > 0 ? cfg.replica_Sigma0 : cfg.Sigma0;
  const Mat replica_Sigma_u0 = cfg.replica_Sigma_u0.size() > 0 ? cfg.replica_Sigma_u0 : cfg.Sigma_u0;
  ForwardState replica = make_forward_state(cfg.forward, fm, x_dhat0, replica_Sigma0, u_hat0,
                                            replica_Sigma_u0, cfg.Sigma_xu0);
  const Vec z0 = aug ? concat(x_dhat0, u_dhat0) : x_dhat0;
  InverseOptions opts{cfg.jacobians, cfg.enlarge.delta_Q_bar};
  t.inv.push_back(make_inverse_state(cfg.inverse, fm, z0, cfg.Sigma_bar0, replica, opts));
  for (int k = 0; k < K; ++k) {
    InverseInputs in{t.a[k + 1], t.truth.x[k], t.truth.x[k + 1],
                     truth_model.m > 0 ? t.truth.u[k + 1] : Vec()};
    at_step("inverse", k, [&] { t.inv.push_back(inverse_step(cfg.inverse, fm, t.inv.back(), in)); });
  }

  t.J_fwd = additive_info_series(truth_model, t.truth, inverse_spd(cfg.Sigma0));
  const Mat J_bar0 = cfg.J_bar0.size() > 0 ? cfg.J_bar0 : inverse_spd(cfg.Sigma_bar0);
  t.J_inv = inverse_info_series(cfg, truth_model, t.truth, t.fwd, J_bar0);
  return t;
}

int thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("IFK_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const auto start = std::chrono::steady_clock::now();
  const SystemModel model = config_model(cfg);
  const int R = cfg.runs;

  std::vector<std::optional<RunSummary>> done(R);
  std::vector<std::string> diverged(R);
  std::vector<std::exception_ptr> failed(R);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int r = next++; r < R; r = next++) {
      try {
        done[r] = summarize(model, simulate_run(cfg, model, r), cfg.keep_traces);
      } catch (const Error& e) {
        if (is_divergence(e)) {
          diverged[r] = bare_message(e);
        } else {
          failed[r] = std::make_exception_ptr(
              Error(e.code(), "run " + std::to_string(r) + ": " + bare_message(e)));
        }
      } catch (...) {
        failed[r] = std::current_exception();
      }
    }
  };
  const int T = std::min(thread_count(cfg.threads), R);
  std::vector<std::thread> pool;
  for (int i = 1; i < T; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (int r = 0; r < R; ++r) {
    if (failed[r]) std::rethrow_exception(failed[r]);
  }

  ExperimentResult res;
  res.config = cfg;
  std::vector<std::vector<double>> tr_fwd, tr_inv;
  for (int r = 0; r < R; ++r) {
    if (!done[r]) {
      res.diverged_runs.push_back(r);
      res.diverged_reasons.push_back(diverged[r]);
      continue;
    }
    RunSummary& s = *done[r];
    res.included_runs.push_back(r);
    res.terminal_err_fwd.push_back(std::sqrt(s.sq_fwd.back()));
    res.terminal_err_inv.push_back(std::sqrt(s.sq_inv.back()));
    res.sq_err_fwd.push_back(std::move(s.sq_fwd));
    res.sq_err_inv.push_back(std::move(s.sq_inv));
    tr_fwd.push_back(std::move(s.tr_fwd));
    tr_inv.push_back(std::move(s.tr_inv));
    if (s.trace) res.traces.push_back(std::move(*s.trace));
  }
  if (res.included_runs.empty()) {
    throw Error(ErrorCode::EmptyEnsemble,
                "all " + std::to_string(R) + " runs diverged; first: " + diverged.front());
  }

  const int n = model.n;
  const ErrorSeries fwd = ensemble_metrics(res.sq_err_fwd, n);
  const ErrorSeries inv = ensemble_metrics(res.sq_err_inv, n);
  res.rmse_fwd = fwd.rmse;
  res.amse_fwd = fwd.amse;
  res.rmse_inv = inv.rmse;
  res.amse_inv = inv.amse;
  res.rcrlb_fwd = mean_root(tr_fwd, n);
  res.rcrlb_inv = mean_root(tr_inv, n);
  for (int k = 1; k <= cfg.steps; ++k) res.k.push_back(k);
  res.rcrlb_inverse_gaussianized =
      cfg.inverse == InverseKind::IEKFWodf || cfg.inverse == InverseKind::IEKFWdf;
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  res.metadata = {
      {"model", cfg.model},
      {"forward", std::string(to_string(cfg.forward))},
      {"inverse", std::string(to_string(cfg.inverse))},
      {"steps", std::to_string(cfg.steps)},
      {"runs", std::to_string(cfg.runs)},
      {"seed", std::to_string(cfg.seed)},
      {"rng", Rng::kAlgorithm},
      {"jacobians", cfg.jacobians == JacobianMode::Analytic ? "analytic" : "finite-difference"},
      {"included_runs", std::to_string(res.included_runs.size())},
      {"diverged_runs", std::to_string(res.diverged_runs.size())},
      {"diverged_indices", join_ints(res.diverged_runs)},
      {"rcrlb", "sqrt(mean over runs of Tr(J^-1) state block / n)"},
      {"rcrlb_inverse", res.rcrlb_inverse_gaussianized
                            ? "gaussianized transition (approximation)"
                            : "additive gaussian transition"},
  };
  return res;
}

ErrorSeries metrics(const std::vector<Vec>& errors, int n) {
  std::vector<double> sq;
  for (const Vec& e : errors) sq.push_back(e.squaredNorm());
  return ensemble_metrics({sq}, n);
}

ErrorSeries ensemble_metrics(const std::vector<std::vector<double>>& sq_err, int n) {
  ErrorSeries out;
  if (sq_err.empty()) return out;
  const std::size_t K = sq_err.front().size();
  double cum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (const auto& r : sq_err) sum += r[k];
    const double mean = sum / static_cast<double>(sq_err.size());
    cum += mean;
    out.rmse.push_back(std::sqrt(mean / n));
    out.amse.push_back(std::sqrt(cum / (static_cast<double>(n) * static_cast<double>(k + 1))));
  }
  return out;
}

std::string result_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "k,rmse_fwd,amse_fwd,rcrlb_fwd,amse_inv,rcrlb_inv\n";
  for (std::size_t i = 0; i < r.k.size(); ++i) {
    out << r.k[i] << ',' << format_double(r.rmse_fwd[i]) << ',' << format_double(r.amse_fwd[i])
        << ',' << format_double(r.rcrlb_fwd[i]) << ',' << format_double(r.amse_inv[i]) << ','
        << format_double(r.rcrlb_inv[i]) << '\n';
  }
  for (const auto& [key, value] : r.metadata) out << "# " << key << '=' << value << '\n';
  return out.str();
}

void export_csv(const ExperimentResult& result, const std::string& path) {
  write_file_atomic(path, result_csv(result));
}

CsvSeries parse_series_csv(const std::string& text) {
  CsvSeries out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      if (!body.empty() && body[0] == ' ') body.erase(0, 1);
      const auto eq = body.find('=');
      out.metadata.emplace_back(body.substr(0, eq),
                                eq == std::string::npos ? "" : body.substr(eq + 1));
      continue;
    }
    const auto cells = split(line, ',');
    if (out.header.empty()) {
      out.header = cells;
      out.columns.resize(cells.size());
      continue;
    }
    if (cells.size() != out.header.size()) {
      throw Error(ErrorCode::IoError, "line " + std::to_string(lineno) + ": expected " +
                                          std::to_string(out.header.size()) + " cells");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) out.columns[c].push_back(parse_double(cells[c]));
  }
  if (out.header.empty()) throw Error(ErrorCode::IoError, "CSV has no header");
  return out;
}

CsvSeries import_csv(const std::string& path) { return parse_series_csv(read_file(path)); }

}  // namespace ifk
