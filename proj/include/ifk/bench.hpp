#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ifk/inverse.hpp"
#include "ifk/rcrlb.hpp"
#include "ifk/stability.hpp"

namespace ifk {

/// One entry of an initial vector: a constant or a per-run random draw.
struct ComponentSpec {
  enum class Kind { Fixed, Normal, Uniform };
  Kind kind = Kind::Fixed;
  double a = 0.0;  // value, mean or lower end
  double b = 0.0;  // stddev or upper end
};
using VectorSpec = std::vector<ComponentSpec>;

/// Initial inverse estimate: explicit, or copied from a quantity the
/// defender knows (the true x_0 / u_0) or the forward filter's initial estimate.
struct InitSpec {
  enum class Source { Explicit, TrueState, ForwardEstimate, TrueInput };
  Source source = Source::Explicit;
  VectorSpec values;
};

struct InputSpec {
  enum class Kind { None, Constant, Step };
  Kind kind = Kind::None;
  Vec before;  // constant value, or u_k for k <= last_before
  Vec after;
  int last_before = 0;
};

struct ExperimentConfig {
  std::string model = "linear3:without-df";
  ForwardKind forward = ForwardKind::KFWodf;
  InverseKind inverse = InverseKind::IKFWodf;
  int steps = 100;
  int runs = 200;
  std::uint64_t seed = 42;

  VectorSpec x0;
  VectorSpec x_hat0;
  Mat Sigma0;
  VectorSpec u_hat0;   // empty: zero
  Mat Sigma_u0;        // empty: zero
  Mat Sigma_xu0;       // empty: zero
  InitSpec x_dhat0;
  InitSpec u_dhat0;    // augmented inverse filters only
  Mat Sigma_bar0;
  Mat replica_Sigma0;  // empty: Sigma0
  Mat replica_Sigma_u0;
  Mat J_bar0;          // empty: Sigma_bar0^-1
  InputSpec input;

  // Noise of the simulated system; empty keeps the model's.
  Mat Q, R, Sigma_eps;
  Perturbations enlarge;  // added to the covariances the filters assume
  JacobianMode jacobians = JacobianMode::Analytic;

  int threads = 0;  // 0: IFK_THREADS, then hardware concurrency
  bool keep_traces = false;

  std::string out_csv;
  std::string out_svg;
};

/// Parses the JSON config document. Unknown or malformed keys raise
/// ConfigError naming the key.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
/// Every top-level key the config schema accepts.
std::vector<std::string> config_keys();

std::vector<std::string> preset_names();
/// The embedded config document of a preset.
const std::string& preset_document(const std::string& name);
ExperimentConfig preset_config(const std::string& name);

/// Model the config describes, with noise overrides applied.
SystemModel config_model(const ExperimentConfig& cfg);
/// Throws ConfigError when filters, model variant and initializations disagree.
void validate_config(const ExperimentConfig& cfg);

/// Full state of one run, kept when cfg.keep_traces is set.
struct RunTrace {
  Trajectory truth;
  std::vector<Vec> a;  // a_0 .. a_K; a_0 is empty
  std::vector<ForwardState> fwd;
  std::vector<InverseState> inv;
  std::vector<InfoMatrix> J_fwd, J_inv;
};

struct ExperimentResult {
  ExperimentConfig config;
  // Series over k = 1..K.
  std::vector<int> k;
  std::vector<double> rmse_fwd, amse_fwd, rcrlb_fwd, rmse_inv, amse_inv, rcrlb_inv;
  // sq_err_*[r][k - 1] = |e_k|^2 of included run r.
  std::vector<std::vector<double>> sq_err_fwd, sq_err_inv;
  std::vector<double> terminal_err_fwd, terminal_err_inv;  // |e_K| per included run
  std::vector<int> included_runs;
  std::vector<int> diverged_runs;
  std::vector<std::string> diverged_reasons;
  bool rcrlb_inverse_gaussianized = false;
  double wall_seconds = 0.0;
  std::vector<RunTrace> traces;  // included runs, when requested
  std::vector<std::pair<std::string, std::string>> metadata;
};

/// Runs the Monte-Carlo experiment. Run r draws everything from
/// Rng(seed, r), so results do not depend on the thread count.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// One run of the experiment.
RunTrace simulate_run(const ExperimentConfig& cfg, const SystemModel& truth_model, int run);

struct ErrorSeries {
  std::vector<double> rmse;  // sqrt(|e_k|^2 / n)
  std::vector<double> amse;  // sqrt(sum_{i<=k} |e_i|^2 / (n k))
};
/// Series of a single run from its error vectors e_1 .. e_K.
ErrorSeries metrics(const std::vector<Vec>& errors, int n);
/// Ensemble series from squared error norms: mean over runs inside the root.
ErrorSeries ensemble_metrics(const std::vector<std::vector<double>>& sq_err, int n);

/// `k,rmse_fwd,amse_fwd,rcrlb_fwd,amse_inv,rcrlb_inv` rows, then `# key=value` lines.
std::string result_csv(const ExperimentResult& result);
void export_csv(const ExperimentResult& result, const std::string& path);

struct CsvSeries {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
  std::vector<std::pair<std::string, std::string>> metadata;
};
CsvSeries import_csv(const std::string& path);
CsvSeries parse_series_csv(const std::string& text);

/// SVG with k on the x axis and a log-scaled y axis; one polyline per series.
std::string plot_svg(const std::vector<int>& k, const std::vector<std::string>& labels,
                     const std::vector<std::vector<double>>& series, const std::string& title);
void emit_plot(const ExperimentResult& result, const std::string& path);

/// Thread count from IFK_THREADS (0 or unset: hardware concurrency).
int thread_count(int requested);

}  // namespace ifk
