#include "ifk/cli.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ifk/bench.hpp"
#include "ifk/errors.hpp"
#include "ifk/io.hpp"
#include "ifk/stability.hpp"

namespace ifk {

namespace {

constexpr double kPi = 3.141592653589793;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::UsageError:
    case ErrorCode::IoError:
    case ErrorCode::UnknownModel:
    case ErrorCode::DimMismatch:
    case ErrorCode::MissingInput:
      return 1;
    default:
      return 2;
  }
}

Vec parse_list(const std::string& text, const char* what) {
  const auto cells = split(text, ',');
  Vec out(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    try {
      out(i) = parse_double(cells[i]);
    } catch (const Error&) {
      throw Error(ErrorCode::UsageError, std::string(what) + ": '" + cells[i] + "' is not a number");
    }
  }
  return out;
}

// Initial state and input schedule used when the command line gives none:
// the values of the matching experiment preset.
Vec default_x0(const SystemModel& model) {
  return model.linear ? Vec::Ones(model.n) : Vec::Zero(model.n);
}

InputSchedule default_schedule(const SystemModel& model) {
  if (model.m == 0) return constant_schedule(Vec());
  const double level = model.linear ? 50.0 : kPi / 4.0;
  return step_schedule(Vec::Constant(model.m, level), Vec::Constant(model.m, -level), 50);
}

struct TruthOptions {
  std::string model;
  int steps = 100;
  std::uint64_t seed = 42;
  std::string x0;
};

void add_truth_options(CLI::App* cmd, TruthOptions& o) {
  cmd->add_option("--model", o.model, "Model as <name>:<variant>, e.g. linear3:without-df")
      ->required();
  cmd->add_option("--steps", o.steps, "Number of time steps K")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "RNG seed (default 42)");
  cmd->add_option("--x0", o.x0, "Initial state as comma-separated values");
}

Trajectory simulate_truth(const SystemModel& model, const TruthOptions& o) {
  Vec x0 = default_x0(model);
  if (!o.x0.empty()) {
    x0 = parse_list(o.x0, "--x0");
    if (x0.size() != model.n) {
      throw Error(ErrorCode::UsageError, "--x0 needs " + std::to_string(model.n) + " values");
    }
  }
  return simulate_trajectory(model, x0, default_schedule(model), o.steps, o.seed);
}

// Experiment config used by the stability command: the preset of the same
// model when one exists, otherwise a KF pair for the linear model without input.
ExperimentConfig stability_config(const std::string& model_spec) {
  const SystemModel model = builtin_model(model_spec);
  const std::string canonical = model.name + ":" + std::string(to_string(model.variant));
  for (const auto& name : preset_names()) {
    ExperimentConfig cfg = preset_config(name);
    if (cfg.model == canonical) return cfg;
  }
  ExperimentConfig cfg;
  cfg.model = canonical;
  cfg.forward = model.linear ? ForwardKind::KF : ForwardKind::EKF;
  cfg.inverse = inverse_kind_for(cfg.forward);
  for (int i = 0; i < model.n; ++i) {
    cfg.x0.push_back({ComponentSpec::Kind::Fixed, 1.0, 0.0});
    cfg.x_hat0.push_back({ComponentSpec::Kind::Fixed, 0.0, 0.0});
  }
  cfg.Sigma0 = Mat::Identity(model.n, model.n);
  cfg.x_dhat0.source = InitSpec::Source::TrueState;
  cfg.Sigma_bar0 = 5.0 * Mat::Identity(model.n, model.n);
  validate_config(cfg);
  return cfg;
}

std::string help_footer() {
  std::ostringstream out;
  out << "\nPresets (experiment --preset):";
  for (const auto& p : preset_names()) out << ' ' << p;
  out << "\nConfig keys (experiment --config FILE, JSON object):";
  for (const auto& k : config_keys()) out << ' ' << k;
  out << "\nModels:";
  for (const auto& m : builtin_model_names()) out << ' ' << m << ":{no-input,without-df,with-df}";
  out << "\nEnvironment: IFK_THREADS caps parallel runs (0 or unset = all cores).";
  out << "\nExit codes: 0 success, 1 usage or config error, 2 numeric failure.\n";
  return out.str();
}

struct Cli {
  CLI::App app{"Forward and inverse Kalman filter experiments", "ifk"};
  int verbosity = 0;

  CLI::App* simulate = nullptr;
  TruthOptions sim;
  std::string sim_out;

  CLI::App* experiment = nullptr;
  std::string preset, config_path, out_csv, out_svg;
  int runs = 0, exp_steps = 0, threads = -1;
  std::uint64_t exp_seed = 42;

  CLI::App* rcrlb = nullptr;
  TruthOptions rc;
  std::string rc_out;
  double rc_sigma0 = 1.0;

  CLI::App* stability = nullptr;
  std::string st_model, st_format = "text", st_out;
  int st_runs = 50, st_steps = 100;
  std::uint64_t st_seed = 42;
  double st_guard = 1e-6;
  double dQ = 0.0, dR = 0.0, dQbar = 0.0, deps = 0.0;

  Cli() {
    app.require_subcommand(1);
    app.footer(help_footer());
    app.add_flag("-v,--verbose", verbosity, "Print progress to stderr");

    simulate = app.add_subcommand("simulate", "Simulate a true trajectory and write it as CSV");
    add_truth_options(simulate, sim);
    simulate->add_option("--out", sim_out, "Output CSV")->required();

    experiment = app.add_subcommand("experiment", "Run a Monte-Carlo forward/inverse experiment");
    experiment->add_option("--preset", preset, "Embedded experiment config");
    experiment->add_option("--config", config_path, "JSON experiment config file");
    experiment->add_option("--runs", runs, "Override the number of runs")->check(CLI::PositiveNumber);
    experiment->add_option("--steps", exp_steps, "Override the number of steps")
        ->check(CLI::PositiveNumber);
    experiment->add_option("--seed", exp_seed, "RNG seed (default 42)");
    experiment->add_option("--threads", threads, "Worker threads (0 = IFK_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    experiment->add_option("--out-csv", out_csv, "Series CSV");
    experiment->add_option("--out-svg", out_svg, "SVG plot of the series");

    rcrlb = app.add_subcommand("rcrlb", "Fisher information series along a simulated trajectory");
    add_truth_options(rcrlb, rc);
    rcrlb->add_option("--sigma0", rc_sigma0, "J_0 = I / sigma0")->check(CLI::PositiveNumber);
    rcrlb->add_option("--out", rc_out, "Output CSV")->required();

    stability = app.add_subcommand("stability", "Stability reports for a model");
    stability->add_option("--model", st_model, "Model as <name>:<variant>")->required();
    stability->add_option("--runs", st_runs, "Ensemble size (default 50)")
        ->check(CLI::PositiveNumber);
    stability->add_option("--steps", st_steps, "Steps per run (default 100)")
        ->check(CLI::PositiveNumber);
    stability->add_option("--seed", st_seed, "RNG seed (default 42)");
    stability->add_option("--guard", st_guard, "Denominator guard of the instrumental diagonals");
    stability->add_option("--delta-q", dQ, "Added to Q")->check(CLI::NonNegativeNumber);
    stability->add_option("--delta-r", dR, "Added to R")->check(CLI::NonNegativeNumber);
    stability->add_option("--delta-q-bar", dQbar, "Added to Q_bar")->check(CLI::NonNegativeNumber);
    stability->add_option("--delta-eps", deps, "Added to Sigma_eps")->check(CLI::NonNegativeNumber);
    stability->add_option("--format", st_format, "text or csv")
        ->check(CLI::IsMember({"text", "csv"}));
    stability->add_option("--out", st_out, "Write the report to a file instead of stdout");
  }

  int run_simulate(std::ostream& out) {
    const SystemModel model = builtin_model(sim.model);
    write_trajectory_csv(simulate_truth(model, sim), sim_out);
    if (verbosity > 0) out << "wrote " << sim_out << '\n';
    return 0;
  }

  int run_experiment_cmd(std::ostream& out, std::ostream& err) {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
      if (!preset.empty()) {
        throw Error(ErrorCode::UsageError, "give either --preset or --config, not both");
      }
    } else if (!preset.empty()) {
      cfg = preset_config(preset);
    } else {
      throw Error(ErrorCode::UsageError, "experiment needs --preset or --config");
    }
    if (runs > 0) cfg.runs = runs;
    if (exp_steps > 0) cfg.steps = exp_steps;
    if (experiment->count("--seed") > 0) cfg.seed = exp_seed;
    if (threads >= 0) cfg.threads = threads;
    if (!out_csv.empty()) cfg.out_csv = out_csv;
    if (!out_svg.empty()) cfg.out_svg = out_svg;
    if (cfg.input.kind == InputSpec::Kind::Step && cfg.input.last_before >= cfg.steps) {
      if (verbosity > 0) err << "note: input switch lies beyond the last step\n";
    }

    const ExperimentResult res = run_experiment(cfg);
    if (cfg.out_csv.empty()) {
      out << result_csv(res);
    } else {
      export_csv(res, cfg.out_csv);
    }
    if (!cfg.out_svg.empty()) emit_plot(res, cfg.out_svg);
    if (!res.diverged_runs.empty()) {
      err << "warning: " << res.diverged_runs.size() << " of " << cfg.runs
          << " runs diverged and were excluded\n";
    }
    if (verbosity > 0) {
      const std::size_t last = res.k.size() - 1;
      err << "k=" << res.k[last] << " amse_fwd=" << format_double(res.amse_fwd[last])
          << " rcrlb_fwd=" << format_double(res.rcrlb_fwd[last])
          << " amse_inv=" << format_double(res.amse_inv[last])
          << " rcrlb_inv=" << format_double(res.rcrlb_inv[last]) << " wall_s="
          << res.wall_seconds << '\n';
    }
    return 0;
  }

  int run_rcrlb(std::ostream& out) {
    const SystemModel model = builtin_model(rc.model);
    const Trajectory truth = simulate_truth(model, rc);
    const auto series =
        additive_info_series(model, truth, Mat::Identity(model.n, model.n) / rc_sigma0);
    std::ostringstream csv;
    csv << "k";
    for (int i = 0; i < model.n; ++i) {
      for (int j = 0; j < model.n; ++j) csv << ",J_" << i << '_' << j;
    }
    csv << ",rcrlb\n";
    for (const InfoMatrix& J : series) {
      csv << J.k;
      for (int i = 0; i < model.n; ++i) {
        for (int j = 0; j < model.n; ++j) csv << ',' << format_double(J.J(i, j));
      }
      csv << ',' << format_double(rcrlb_scalar(J)) << '\n';
    }
    csv << "# model=" << rc.model << "\n# seed=" << rc.seed << '\n';
    write_file_atomic(rc_out, csv.str());
    if (verbosity > 0) out << "wrote " << rc_out << '\n';
    return 0;
  }

  int run_stability(std::ostream& out) {
    const SystemModel model = builtin_model(st_model);
    std::ostringstream text, csv;
    csv << "quantity,value,pass\n";
    auto csv_rows = [&](const std::string& block) {
      std::istringstream in(block);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) csv << line << '\n';
    };

    if (model.linear && model.variant == Variant::WithoutDf) {
      const LimitingGains gains = limiting_kf_wodf_gains(model, Mat::Identity(model.n, model.n));
      const Theorem1Report t1 = theorem1_check(gains, model.linear->G, model.Sigma_eps);
      text << "[limiting gains]\n" << to_text(gains) << "\n[theorem 1]\n" << to_text(t1) << '\n';
      csv_rows(to_csv(t1));
    } else {
      text << "[theorem 1]\nnot applicable: needs a linear model without direct feed-through\n\n";
    }

    ExperimentConfig cfg = stability_config(st_model);
    cfg.runs = st_runs;
    cfg.steps = st_steps;
    cfg.seed = st_seed;
    cfg.keep_traces = true;
    cfg.enlarge = {dQ, dR, dQbar, deps};
    const ExperimentResult res = run_experiment(cfg);
    SystemModel fm = config_model(cfg);
    std::vector<std::vector<StepRecord>> ensemble;
    for (const RunTrace& t : res.traces) {
      ensemble.push_back(step_records(fm, t.truth, t.fwd, t.inv, st_guard));
    }
    const Perturbations knobs{dQ, dR, dQbar, deps};
    const BoundEstimates fwd = estimate_bounds(fm, ensemble, BoundSide::Forward, knobs);
    const BoundEstimates inv = estimate_bounds(fm, ensemble, BoundSide::Inverse, knobs);
    const InequalityReport t2 = check_inequality(fwd, StabilityTheorem::Thm2);
    const InequalityReport t3 = check_inequality(inv, StabilityTheorem::Thm3);
    text << "[ensemble]\nconfig: " << cfg.model << ' ' << to_string(cfg.forward) << '/'
         << to_string(cfg.inverse) << "\nincluded_runs: " << res.included_runs.size()
         << "\ndiverged_runs: " << res.diverged_runs.size() << "\n\n[forward bounds]\n"
         << to_text(fwd) << "\n[inverse bounds]\n" << to_text(inv) << "\n[theorem 2]\n"
         << to_text(t2) << "\n[theorem 3]\n" << to_text(t3);
    csv_rows(to_csv(t2));
    csv_rows(to_csv(t3));

    const std::string report = st_format == "csv" ? csv.str() : text.str();
    if (st_out.empty()) {
      out << report;
    } else {
      write_file_atomic(st_out, report);
    }
    return 0;
  }
};

}  // namespace

std::string cli_help() {
  Cli cli;
  return cli.app.help();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli.app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = cli.app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    if (cli.simulate->parsed()) return cli.run_simulate(out);
    if (cli.experiment->parsed()) return cli.run_experiment_cmd(out, err);
    if (cli.rcrlb->parsed()) return cli.run_rcrlb(out);
    if (cli.stability->parsed()) return cli.run_stability(out);
  } catch (const Error& e) {
    err << "ifk: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "ifk: " << e.what() << '\n';
    return 2;
  }
  err << cli.app.help();
  return 1;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace ifk
