#include "lpvrl/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lpvrl/rng.hpp"

namespace lpvrl {

namespace fs = std::filesystem;
using nlohmann::json;

MpcConfig ExperimentConfig::mpc_config() const {
  MpcConfig c;
  c.horizon = horizon;
  c.gamma = gamma;
  c.u_min = u_min;
  c.u_max = u_max;
  c.slack_weight = slack_weight;
  c.slack_weight_terminal = slack_weight_terminal;
  c.has_state_box = state_box;
  c.x_min = x_min;
  c.x_max = x_max;
  return c;
}

MheConfig ExperimentConfig::mhe_config() const {
  MheConfig c;
  c.horizon = horizon;
  c.gamma = gamma;
  c.meas_dim = 1;
  return c;
}

void ExperimentConfig::validate() const {
  auto check_bounds = [](const SchedulingBounds& b, const char* which) {
    if (b.mass <= 0.0) throw ConfigError(std::string(which) + ": mass must be positive");
    if (b.lower.size() != 2 || b.upper.size() != 2)
      throw ConfigError(std::string(which) + ": expected (k, d) bounds");
    for (int i = 0; i < 2; ++i)
      if (b.lower(i) > b.upper(i)) throw ConfigError(std::string(which) + ": inverted bounds");
  };
  check_bounds(true_bounds, "true bounds");
  check_bounds(design_bounds, "design bounds");
  if (true_bounds.mass != design_bounds.mass) throw ConfigError("mass must be shared");
  if (h <= 0.0) throw ConfigError("h must be positive");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("gamma must lie in (0,1)");
  if (episode_steps < 1) throw ConfigError("episode_steps must be >= 1");
  if (episodes_per_iteration < 1) throw ConfigError("episodes_per_iteration must be >= 1");
  if (rl_iterations < 0) throw ConfigError("rl_iterations must be >= 0");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (exploration < 0.0) throw ConfigError("exploration must be >= 0");
  if (u_min >= u_max) throw ConfigError("u_min must be < u_max");
  if (stage_cost_qy < 0.0 || stage_cost_ra < 0.0) throw ConfigError("stage cost weights must be >= 0");
  if (slack_weight <= 0.0 || slack_weight_terminal <= 0.0)
    throw ConfigError("slack weights must be positive");
  if (state_box && (x_min.size() != 2 || x_max.size() != 2))
    throw ConfigError("state box requires x_min and x_max of length 2");
  if (state_box)
    for (int i = 0; i < 2; ++i)
      if (x_min(i) >= x_max(i)) throw ConfigError("state box inverted");
  if (measurement_noise_std < 0.0) throw ConfigError("measurement_noise_std must be >= 0");
  // slice names are validated by ThetaLayout::build
  ThetaLayout::build(learned_slices, 2, 1, 1, 4, state_box ? 4 : 0);
}

namespace {

ScheduleMode parse_mode(const std::string& s) {
  if (s == "constant-per-episode") return ScheduleMode::ConstantPerEpisode;
  if (s == "piecewise-constant") return ScheduleMode::PiecewiseConstant;
  if (s == "sinusoidal-drift") return ScheduleMode::SinusoidalDrift;
  throw ConfigError("unknown schedule_mode: " + s);
}

const char* mode_name(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::ConstantPerEpisode: return "constant-per-episode";
    case ScheduleMode::PiecewiseConstant: return "piecewise-constant";
    case ScheduleMode::SinusoidalDrift: return "sinusoidal-drift";
  }
  return "constant-per-episode";
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "mass", "true_k_min", "true_k_max", "true_d_min", "true_d_max",
      "design_k_min", "design_k_max", "design_d_min", "design_d_max",
      "h", "horizon", "gamma", "episode_steps", "episodes_per_iteration",
      "rl_iterations", "eval_episodes", "alpha", "exploration", "seed",
      "eval_seed", "u_min", "u_max", "stage_cost_qy", "stage_cost_ra",
      "slack_weight", "slack_weight_terminal", "state_box", "x_min", "x_max",
      "measurement_noise_std", "schedule_mode", "learned_slices",
      "theta_init", "out_dir", "debug_traces"};
  return keys;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& err) {
    throw ConfigError(std::string("config parse error: ") + err.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& item : j.items())
    if (known_keys().find(item.key()) == known_keys().end())
      throw ConfigError("unknown config key: " + item.key());
  if (!j.contains("seed")) throw ConfigError("config must set an explicit seed");

  ExperimentConfig cfg;
  try {
    const double mass = j.value("mass", 1.0);
    cfg.true_bounds.mass = mass;
    cfg.design_bounds.mass = mass;
    cfg.true_bounds.lower = Eigen::Vector2d(j.value("true_k_min", 0.5), j.value("true_d_min", 0.0));
    cfg.true_bounds.upper = Eigen::Vector2d(j.value("true_k_max", 2.0), j.value("true_d_max", 0.2));
    cfg.design_bounds.lower =
        Eigen::Vector2d(j.value("design_k_min", 1.0), j.value("design_d_min", 0.0));
    cfg.design_bounds.upper =
        Eigen::Vector2d(j.value("design_k_max", 2.0), j.value("design_d_max", 0.5));
    cfg.h = j.value("h", 0.05);
    cfg.horizon = j.value("horizon", 10);
    cfg.gamma = j.value("gamma", 0.95);
    cfg.episode_steps = j.value("episode_steps", 200);
    cfg.episodes_per_iteration = j.value("episodes_per_iteration", 5);
    cfg.rl_iterations = j.value("rl_iterations", 60);
    cfg.eval_episodes = j.value("eval_episodes", 3);
    cfg.alpha = j.value("alpha", 1e-3);
    cfg.exploration = j.value("exploration", 0.1);
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.eval_seed = j.value("eval_seed", 1000);
    cfg.u_min = j.value("u_min", -1.0);
    cfg.u_max = j.value("u_max", 1.0);
    cfg.stage_cost_qy = j.value("stage_cost_qy", 1.0);
    cfg.stage_cost_ra = j.value("stage_cost_ra", 0.1);
    cfg.slack_weight = j.value("slack_weight", 1e3);
    cfg.slack_weight_terminal = j.value("slack_weight_terminal", 1e3);
    cfg.state_box = j.value("state_box", false);
    if (j.contains("x_min")) {
      const auto v = j.at("x_min").get<std::vector<double>>();
      cfg.x_min = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
    }
    if (j.contains("x_max")) {
      const auto v = j.at("x_max").get<std::vector<double>>();
      cfg.x_max = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
    }
    cfg.measurement_noise_std = j.value("measurement_noise_std", 0.0);
    cfg.schedule_mode = parse_mode(j.value("schedule_mode", std::string("constant-per-episode")));
    if (j.contains("learned_slices"))
      cfg.learned_slices = j.at("learned_slices").get<std::vector<std::string>>();
    cfg.theta_init_path = j.value("theta_init", std::string());
    cfg.out_dir = j.value("out_dir", std::string("run_out"));
    cfg.debug_traces = j.value("debug_traces", false);
  } catch (const json::exception& err) {
    throw ConfigError(std::string("config type error: ") + err.what());
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["mass"] = cfg.true_bounds.mass;
  j["true_k_min"] = cfg.true_bounds.lower(0);
  j["true_k_max"] = cfg.true_bounds.upper(0);
  j["true_d_min"] = cfg.true_bounds.lower(1);
  j["true_d_max"] = cfg.true_bounds.upper(1);
  j["design_k_min"] = cfg.design_bounds.lower(0);
  j["design_k_max"] = cfg.design_bounds.upper(0);
  j["design_d_min"] = cfg.design_bounds.lower(1);
  j["design_d_max"] = cfg.design_bounds.upper(1);
  j["h"] = cfg.h;
  j["horizon"] = cfg.horizon;
  j["gamma"] = cfg.gamma;
  j["episode_steps"] = cfg.episode_steps;
  j["episodes_per_iteration"] = cfg.episodes_per_iteration;
  j["rl_iterations"] = cfg.rl_iterations;
  j["eval_episodes"] = cfg.eval_episodes;
  j["alpha"] = cfg.alpha;
  j["exploration"] = cfg.exploration;
  j["seed"] = cfg.seed;
  j["eval_seed"] = cfg.eval_seed;
  j["u_min"] = cfg.u_min;
  j["u_max"] = cfg.u_max;
  j["stage_cost_qy"] = cfg.stage_cost_qy;
  j["stage_cost_ra"] = cfg.stage_cost_ra;
  j["slack_weight"] = cfg.slack_weight;
  j["slack_weight_terminal"] = cfg.slack_weight_terminal;
  j["state_box"] = cfg.state_box;
  if (cfg.x_min.size() > 0)
    j["x_min"] = std::vector<double>(cfg.x_min.data(), cfg.x_min.data() + cfg.x_min.size());
  if (cfg.x_max.size() > 0)
    j["x_max"] = std::vector<double>(cfg.x_max.data(), cfg.x_max.data() + cfg.x_max.size());
  j["measurement_noise_std"] = cfg.measurement_noise_std;
  j["schedule_mode"] = mode_name(cfg.schedule_mode);
  j["learned_slices"] = cfg.learned_slices;
  j["theta_init"] = cfg.theta_init_path;
  j["out_dir"] = cfg.out_dir;
  j["debug_traces"] = cfg.debug_traces;
  return j.dump(2) + "\n";
}

void InvariantStats::merge(const InvariantStats& other) {
  max_abs_u = std::max(max_abs_u, other.max_abs_u);
  max_simplex_violation = std::max(max_simplex_violation, other.max_simplex_violation);
  min_beta_entry = std::min(min_beta_entry, other.min_beta_entry);
  estimator_fallbacks += other.estimator_fallbacks;
  dropped_transitions += other.dropped_transitions;
  total_steps += other.total_steps;
}

void initial_thetas(const ExperimentConfig& cfg, MheTheta& mhe_theta, MpcTheta& mpc_theta) {
  const PolytopicModel model_d = discretize(msd_vertices(cfg.design_bounds), cfg.h);
  mhe_theta = MheTheta::defaults(model_d.dims.n, model_d.dims.e);
  mpc_theta = MpcTheta::defaults(model_d, cfg.mpc_config());
}

namespace {

Eigen::VectorXd mpc_warm_primal(const MpcSolution& sol, int n_h) {
  const int m = static_cast<int>(sol.u_pred.rows());
  const int n = static_cast<int>(sol.x_pred.rows());
  const int N = static_cast<int>(sol.u_pred.cols());
  Eigen::VectorXd w(N * m + (N + 1) * n + (N + 1) * n_h);
  for (int j = 0; j < N; ++j) w.segment(j * m, m) = sol.u_pred.col(j);
  for (int j = 0; j <= N; ++j) w.segment(N * m + j * n, n) = sol.x_pred.col(j);
  if (n_h > 0) w.tail((N + 1) * n_h) = sol.slacks;
  return w;
}

std::vector<Eigen::VectorXd> padded_schedule(const MheSolution& mhe, int N, int l) {
  std::vector<Eigen::VectorXd> sched(N + 1);
  const int Nw = mhe.window_length();
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(l, 1.0 / l);
  for (int j = 0; j <= N; ++j) {
    const int stage = j;  // schedule position j maps to window stage j
    if (Nw >= 1) {
      const int idx = std::min(std::max(stage, 1), Nw) - 1;
      sched[j] = mhe.beta.col(idx);
    } else {
      sched[j] = uniform;
    }
  }
  return sched;
}

}  // namespace

EpisodeResult run_episode(const ExperimentConfig& cfg, const MheTheta& mhe_theta,
                          const MpcTheta& mpc_theta, const ThetaLayout& layout,
                          const EpisodeOptions& opts) {
  const PolytopicModel model_d = discretize(msd_vertices(cfg.design_bounds), cfg.h);
  const MheConfig mhe_cfg = cfg.mhe_config();
  const MpcConfig mpc_cfg = cfg.mpc_config();
  const int N = cfg.horizon;
  const int l = model_d.num_vertices();
  const int T = cfg.episode_steps;

  Rng rng(opts.seed);
  const std::uint64_t sched_seed = mix_seed(opts.seed, 11);
  const std::uint64_t explore_seed = mix_seed(opts.seed, 22);
  const std::uint64_t noise_seed = mix_seed(opts.seed, 33);
  Rng explore_rng(explore_seed);
  Rng noise_rng(noise_seed);

  const ScheduleTrajectory true_sched =
      sample_schedule(cfg.true_bounds, cfg.schedule_mode, T, sched_seed);

  Eigen::VectorXd x_true(2);
  if (opts.x0_override != nullptr)
    x_true = *opts.x0_override;
  else
    x_true << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);

  auto measure = [&](const Eigen::VectorXd& x) {
    double y = x(0);
    if (cfg.measurement_noise_std > 0.0) {
      const double u1 = std::max(noise_rng.uniform(), 1e-300);
      const double u2 = noise_rng.uniform();
      y += cfg.measurement_noise_std * std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * M_PI * u2);
    }
    return y;
  };

  SolverOptions solver_opts;
  EpisodeResult out;
  out.transitions.reserve(T);
  out.records.reserve(T);

  double y_k = measure(x_true);
  Eigen::VectorXd y_vec(1);
  y_vec << y_k;
  MheWindow window = cold_start(y_vec, N, model_d.dims.n, l);
  MheSolution mhe_sol = estimate(model_d, window, mhe_theta, mhe_cfg, solver_opts, false);

  Eigen::VectorXd mpc_warm;
  bool have_warm = false;
  const Eigen::VectorXd uniform_beta = Eigen::VectorXd::Constant(l, 1.0 / l);

  for (int k = 0; k < T; ++k) {
    const bool mhe_ok = mhe_sol.status == SolveStatus::Converged;
    if (!mhe_ok) out.stats.estimator_fallbacks += 1;
    const bool want_grad = opts.collect_gradients && window.full() && mhe_ok &&
                           mhe_sol.sensitivity_ok;

    const std::vector<Eigen::VectorXd> sched =
        window.full() ? beta_schedule(mhe_sol, mpc_cfg) : padded_schedule(mhe_sol, N, l);
    const Eigen::VectorXd xhat_k = mhe_sol.latest_state();
    MpcSolution mpc_sol =
        policy_with_schedule(model_d, xhat_k, sched, mpc_theta, mpc_cfg, solver_opts, want_grad,
                             have_warm ? &mpc_warm : nullptr);
    mpc_warm = mpc_warm_primal(mpc_sol, mpc_cfg.num_slack_rows(model_d.dims.n));
    have_warm = true;

    const double pi_k = mpc_sol.u0(0);
    double a_k = pi_k;
    if (opts.explore && cfg.exploration > 0.0)
      a_k = std::clamp(pi_k + explore_rng.uniform(-cfg.exploration, cfg.exploration), cfg.u_min,
                       cfg.u_max);

    Eigen::VectorXd y_now(1), a_now(1), pi_now(1);
    y_now << y_k;
    a_now << a_k;
    pi_now << pi_k;
    const double L_k = stage_cost(y_now, a_now, cfg.stage_cost_qy, cfg.stage_cost_ra);
    out.discounted_return += std::pow(cfg.gamma, k) * L_k;

    const Eigen::VectorXd beta_k =
        mhe_sol.window_length() >= 1 ? mhe_sol.latest_beta() : uniform_beta;

    Transition tr;
    tr.xhat = xhat_k;
    tr.beta = beta_k;
    tr.y = y_now;
    tr.action = a_now;
    tr.pi = pi_now;
    tr.stage_cost = L_k;
    tr.valid = want_grad && mpc_sol.status == SolveStatus::Converged && mpc_sol.sensitivity_ok;
    if (tr.valid) {
      tr.xi = jacobian_xi(mpc_sol, mhe_sol, layout);
      if (!tr.xi.allFinite()) tr.valid = false;
    } else {
      tr.xi = Eigen::MatrixXd::Zero(layout.dim, 1);
    }
    if (opts.collect_gradients && window.full() && !tr.valid)
      out.stats.dropped_transitions += 1;

    EpisodeRecord rec;
    rec.episode = opts.episode_index;
    rec.k = k;
    rec.t = k * cfg.h;
    rec.y = y_k;
    rec.x_true = x_true;
    rec.x_hat = xhat_k;
    rec.beta = beta_k;
    rec.beta_true = true_beta(true_sched.samples[k].head<2>(), cfg.true_bounds);
    rec.u_applied = a_k;
    rec.u_policy = pi_k;
    rec.stage_cost = L_k;
    rec.valid = tr.valid;
    out.records.push_back(std::move(rec));

    out.stats.max_abs_u = std::max(out.stats.max_abs_u, std::abs(a_k));
    out.stats.max_simplex_violation =
        std::max(out.stats.max_simplex_violation, std::abs(beta_k.sum() - 1.0));
    out.stats.min_beta_entry = std::min(out.stats.min_beta_entry, beta_k.minCoeff());
    out.stats.total_steps += 1;

    x_true = plant_step(x_true, a_k, true_sched.samples[k].head<2>(), cfg.true_bounds.mass, cfg.h);
    y_k = measure(x_true);
    y_vec << y_k;
    window.push(a_now, y_vec, mhe_sol);
    mhe_sol = estimate(model_d, window, mhe_theta, mhe_cfg, solver_opts,
                       opts.collect_gradients && window.full());

    out.transitions.push_back(std::move(tr));
    out.transitions.back().xhat_next = mhe_sol.latest_state();
  }

  out.final_abs_position = std::abs(x_true(0));
  return out;
}

namespace {

void check_record_invariants(const EpisodeRecord& rec, const ExperimentConfig& cfg) {
  const double u_cap = std::max(std::abs(cfg.u_min), std::abs(cfg.u_max)) + 1e-8;
  if (std::abs(rec.u_applied) > u_cap)
    throw std::runtime_error("episode record violates the input bound invariant");
  if (std::abs(rec.beta.sum() - 1.0) > 1e-8 || rec.beta.minCoeff() < -1e-9)
    throw std::runtime_error("episode record violates the simplex invariant");
}

}  // namespace

void write_episode_csv(const std::string& path, const std::vector<EpisodeRecord>& records,
                       const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "episode,k,t,y,x1_true,x2_true,x1_hat,x2_hat,"
         "beta1,beta2,beta3,beta4,beta1_true,beta2_true,beta3_true,beta4_true,"
         "u_applied,u_policy,L,valid\n";
  for (const auto& r : records) {
    check_record_invariants(r, cfg);
    out << r.episode << ',' << r.k << ',' << format_double(r.t) << ',' << format_double(r.y);
    for (int i = 0; i < 2; ++i) out << ',' << format_double(r.x_true(i));
    for (int i = 0; i < 2; ++i) out << ',' << format_double(r.x_hat(i));
    for (int i = 0; i < 4; ++i) out << ',' << format_double(r.beta(i));
    for (int i = 0; i < 4; ++i) out << ',' << format_double(r.beta_true(i));
    out << ',' << format_double(r.u_applied) << ',' << format_double(r.u_policy) << ','
        << format_double(r.stage_cost) << ',' << (r.valid ? 1 : 0) << '\n';
  }
}

void write_learning_trace_csv(const std::string& path, const std::vector<LearnTraceRow>& rows,
                              const ThetaLayout& layout) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "iteration,j_train,j_eval,b_theta_inf,alpha_used,rejected,cond_nu,cond_w,"
         "valid_transitions,dropped_transitions";
  for (const auto& s : layout.slices) out << ",norm_" << s.name;
  out << '\n';
  for (const auto& r : rows) {
    out << r.iteration << ',' << format_double(r.j_train) << ',' << format_double(r.j_eval) << ','
        << format_double(r.b_theta_inf) << ',' << format_double(r.alpha_used) << ','
        << (r.rejected ? 1 : 0) << ',' << format_double(r.cond_nu) << ','
        << format_double(r.cond_w) << ',' << r.valid_transitions << ',' << r.dropped_transitions;
    for (double v : r.slice_norms) out << ',' << format_double(v);
    out << '\n';
  }
}

void save_theta(const std::string& path, const ThetaLayout& layout,
                const Eigen::VectorXd& theta) {
  json j;
  j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  json slices = json::array();
  for (const auto& s : layout.slices)
    slices.push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  j["layout"] = slices;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

Eigen::VectorXd load_theta(const std::string& path, const ThetaLayout& layout) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open theta file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& err) {
    throw ConfigError(std::string("theta file parse error: ") + err.what());
  }
  try {
    const auto values = j.at("theta").get<std::vector<double>>();
    const auto slices = j.at("layout");
    if (static_cast<int>(values.size()) != layout.dim)
      throw ConfigError("theta file dimension does not match the configured layout");
    if (slices.size() != layout.slices.size())
      throw ConfigError("theta file layout does not match the configured slices");
    for (std::size_t i = 0; i < layout.slices.size(); ++i) {
      if (slices[i].at("name").get<std::string>() != layout.slices[i].name ||
          slices[i].at("offset").get<int>() != layout.slices[i].offset ||
          slices[i].at("size").get<int>() != layout.slices[i].size)
        throw ConfigError("theta file layout mismatch at slice " + layout.slices[i].name);
    }
    return Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
  } catch (const json::exception& err) {
    throw ConfigError(std::string("theta file format error: ") + err.what());
  }
}

namespace {

/// Fixed probe data used to vet a candidate theta before accepting a step:
/// one MPC solve away from the origin and one MHE solve on a consistent
/// design-model window.
struct Probe {
  PolytopicModel model;
  MheWindow window;
  Eigen::VectorXd xhat;
  std::vector<Eigen::VectorXd> sched;
  MheConfig mhe_cfg;
  MpcConfig mpc_cfg;
};

Probe make_probe(const ExperimentConfig& cfg) {
  Probe p;
  p.model = discretize(msd_vertices(cfg.design_bounds), cfg.h);
  p.mhe_cfg = cfg.mhe_config();
  p.mpc_cfg = cfg.mpc_config();
  const int N = cfg.horizon;
  const int l = p.model.num_vertices();
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(l, 1.0 / l);

  Eigen::VectorXd x(2);
  x << 0.6, -0.2;
  p.window.capacity = N;
  p.window.num_vertices = l;
  p.window.prior = x;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2), B = Eigen::MatrixXd::Zero(2, 1);
  for (int i = 0; i < l; ++i) {
    A += uniform(i) * p.model.vertices[i].A;
    B += uniform(i) * p.model.vertices[i].B;
  }
  for (int j = 0; j < N; ++j) {
    Eigen::VectorXd u(1);
    u << 0.4 * std::sin(0.9 * j);
    x = A * x + B * u;
    Eigen::VectorXd y(1);
    y << x(0);
    p.window.inputs.push_back(u);
    p.window.measurements.push_back(y);
    p.window.beta_ref.push_back(uniform);
  }
  p.xhat = Eigen::Vector2d(0.8, 0.4);
  p.sched.assign(N + 1, uniform);
  return p;
}

double slice_norm(const Eigen::VectorXd& theta, const ThetaSlice& s) {
  return theta.segment(s.offset, s.size).norm();
}

}  // namespace

RunArtifacts learn(const ExperimentConfig& cfg, const LearnStop* stop) {
  cfg.validate();
  if (cfg.exploration <= 0.0)
    throw ConfigError("learning requires nonzero exploration (the advantage features vanish)");

  MheTheta mhe_theta;
  MpcTheta mpc_theta;
  initial_thetas(cfg, mhe_theta, mpc_theta);
  const ThetaLayout layout =
      ThetaLayout::build(cfg.learned_slices, 2, 1, 1, 4, cfg.state_box ? 4 : 0);
  if (!cfg.theta_init_path.empty()) {
    const Eigen::VectorXd theta0 = load_theta(cfg.theta_init_path, layout);
    scatter_theta(layout, theta0, mhe_theta, mpc_theta, cfg.mpc_config());
  }
  Eigen::VectorXd theta = gather_theta(layout, mhe_theta, mpc_theta);

  RunArtifacts art;
  art.out_dir = cfg.out_dir;
  fs::create_directories(cfg.out_dir);
  art.config_echo = (fs::path(cfg.out_dir) / "config.json").string();
  {
    std::ofstream out(art.config_echo);
    out << config_to_json(cfg);
  }

  const Probe probe_data = make_probe(cfg);
  const MpcConfig mpc_cfg = cfg.mpc_config();
  auto project = [&](const Eigen::VectorXd& candidate) {
    MheTheta mt = mhe_theta;
    MpcTheta pt = mpc_theta;
    scatter_theta(layout, candidate, mt, pt, mpc_cfg);
    return gather_theta(layout, mt, pt);
  };
  auto probe = [&](const Eigen::VectorXd& candidate) {
    try {
      MheTheta mt = mhe_theta;
      MpcTheta pt = mpc_theta;
      scatter_theta(layout, candidate, mt, pt, mpc_cfg);
      MheWindow w = probe_data.window;
      const MheSolution mhe_sol =
          estimate(probe_data.model, w, mt, probe_data.mhe_cfg, SolverOptions{}, false);
      if (mhe_sol.status != SolveStatus::Converged) return false;
      const MpcSolution mpc_sol = policy_with_schedule(
          probe_data.model, probe_data.xhat, probe_data.sched, pt, probe_data.mpc_cfg,
          SolverOptions{}, false);
      return mpc_sol.status == SolveStatus::Converged;
    } catch (const std::exception&) {
      return false;
    }
  };

  auto run_eval = [&](int iteration, bool dump_csv) {
    double j_sum = 0.0;
    double max_pos = 0.0;
    for (int e = 0; e < cfg.eval_episodes; ++e) {
      EpisodeOptions eo;
      eo.explore = false;
      eo.collect_gradients = false;
      eo.seed = mix_seed(cfg.eval_seed, e);
      eo.episode_index = e;
      const EpisodeResult res = run_episode(cfg, mhe_theta, mpc_theta, layout, eo);
      j_sum += res.discounted_return;
      max_pos = std::max(max_pos, res.final_abs_position);
      art.stats.merge(res.stats);
      if (dump_csv) {
        std::ostringstream name;
        name << "eval_iter" << iteration << "_ep" << e << ".csv";
        const std::string path = (fs::path(cfg.out_dir) / name.str()).string();
        write_episode_csv(path, res.records, cfg);
        art.episode_csvs.push_back(path);
      }
    }
    art.final_eval_max_abs_position = max_pos;
    return j_sum / cfg.eval_episodes;
  };

  const int n_ups = upsilon_dim(2);

  // Iteration 0: baseline evaluation of the initial theta.
  {
    LearnTraceRow row;
    row.iteration = 0;
    row.j_eval = run_eval(0, true);
    row.j_train = row.j_eval;
    for (const auto& s : layout.slices) row.slice_norms.push_back(slice_norm(theta, s));
    art.trace.push_back(row);
    art.initial_eval = row.j_eval;
    art.final_eval = row.j_eval;
  }
  int last_iteration = 0;

  int consecutive_rejected = 0;
  for (int iter = 1; iter <= cfg.rl_iterations; ++iter) {
    std::vector<Transition> batch;
    double j_train_sum = 0.0;
    for (int ep = 0; ep < cfg.episodes_per_iteration; ++ep) {
      EpisodeOptions eo;
      eo.explore = true;
      eo.collect_gradients = true;
      eo.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(iter) * 1000 + ep);
      eo.episode_index = ep;
      EpisodeResult res = run_episode(cfg, mhe_theta, mpc_theta, layout, eo);
      j_train_sum += res.discounted_return;
      art.stats.merge(res.stats);
      for (auto& t : res.transitions) batch.push_back(std::move(t));
    }

    LearnTraceRow row;
    row.iteration = iter;
    row.j_train = j_train_sum / cfg.episodes_per_iteration;

    // Two-pass critic: value weights first, then the advantage weights, then
    // the policy-gradient accumulator.
    LstdAccumulators acc_nu = LstdAccumulators::zero(n_ups, layout.dim);
    lstd_accumulate(batch, acc_nu, cfg.gamma, CriticParams{});
    CriticParams critic = critic_solve(acc_nu);
    row.valid_transitions = acc_nu.count;
    row.dropped_transitions = acc_nu.skipped;

    bool rejected = false;
    if (!critic.ok) {
      rejected = true;
      row.cond_nu = critic.cond_nu;
    } else {
      LstdAccumulators acc_w = LstdAccumulators::zero(n_ups, layout.dim);
      CriticParams nu_only;
      nu_only.nu = critic.nu;
      lstd_accumulate(batch, acc_w, cfg.gamma, nu_only);
      const CriticParams critic_w = critic_solve(acc_w);
      row.cond_nu = critic.cond_nu;
      row.cond_w = critic_w.cond_w;
      if (!critic_w.ok) {
        rejected = true;
      } else {
        CriticParams full;
        full.nu = critic.nu;
        full.w = critic_w.w;
        LstdAccumulators acc_theta = LstdAccumulators::zero(n_ups, layout.dim);
        lstd_accumulate(batch, acc_theta, cfg.gamma, full);
        row.b_theta_inf =
            (acc_theta.b_theta / static_cast<double>(acc_theta.count)).lpNorm<Eigen::Infinity>();
        const PolicyUpdateResult pu =
            policy_update(theta, acc_theta.b_theta, acc_theta.count, cfg.alpha, project, probe);
        row.alpha_used = pu.alpha_used;
        if (pu.accepted) {
          theta = pu.theta;
          scatter_theta(layout, theta, mhe_theta, mpc_theta, mpc_cfg);
        } else {
          rejected = true;
        }
      }
    }
    row.rejected = rejected;
    consecutive_rejected = rejected ? consecutive_rejected + 1 : 0;
    if (consecutive_rejected > 10)
      throw std::runtime_error("learn: more than 10 consecutive rejected updates, aborting");

    row.j_eval = run_eval(iter, false);
    if (!std::isfinite(row.j_eval))
      throw std::runtime_error("learn: evaluation return is not finite");
    art.final_eval = row.j_eval;
    for (const auto& s : layout.slices) row.slice_norms.push_back(slice_norm(theta, s));
    art.trace.push_back(row);
    last_iteration = iter;

    if (stop != nullptr && stop->eval_ratio > 0.0 &&
        row.j_eval <= stop->eval_ratio * art.initial_eval &&
        art.final_eval_max_abs_position <= stop->final_position)
      break;
  }

  // Re-run the final evaluation (same fixed seeds) to dump its episode CSVs.
  art.final_eval = run_eval(last_iteration, true);

  art.learning_trace_csv = (fs::path(cfg.out_dir) / "learning_trace.csv").string();
  write_learning_trace_csv(art.learning_trace_csv, art.trace, layout);
  art.theta_file = (fs::path(cfg.out_dir) / "theta_final.json").string();
  save_theta(art.theta_file, layout, theta);
  return art;
}

RunArtifacts simulate(const ExperimentConfig& cfg, const std::string& theta_path) {
  cfg.validate();
  MheTheta mhe_theta;
  MpcTheta mpc_theta;
  initial_thetas(cfg, mhe_theta, mpc_theta);
  const ThetaLayout layout =
      ThetaLayout::build(cfg.learned_slices, 2, 1, 1, 4, cfg.state_box ? 4 : 0);
  const std::string source = !theta_path.empty() ? theta_path : cfg.theta_init_path;
  if (!source.empty()) {
    const Eigen::VectorXd theta = load_theta(source, layout);
    scatter_theta(layout, theta, mhe_theta, mpc_theta, cfg.mpc_config());
  }

  RunArtifacts art;
  art.out_dir = cfg.out_dir;
  fs::create_directories(cfg.out_dir);
  art.config_echo = (fs::path(cfg.out_dir) / "config.json").string();
  {
    std::ofstream out(art.config_echo);
    out << config_to_json(cfg);
  }

  double j_sum = 0.0;
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    EpisodeOptions eo;
    eo.explore = false;
    eo.collect_gradients = false;
    eo.seed = mix_seed(cfg.eval_seed, e);
    eo.episode_index = e;
    const EpisodeResult res = run_episode(cfg, mhe_theta, mpc_theta, layout, eo);
    j_sum += res.discounted_return;
    art.stats.merge(res.stats);
    art.final_eval_max_abs_position =
        std::max(art.final_eval_max_abs_position, res.final_abs_position);
    std::ostringstream name;
    name << "episode_" << e << ".csv";
    const std::string path = (fs::path(cfg.out_dir) / name.str()).string();
    write_episode_csv(path, res.records, cfg);
    art.episode_csvs.push_back(path);
  }
  art.initial_eval = j_sum / cfg.eval_episodes;
  art.final_eval = art.initial_eval;

  art.theta_file = (fs::path(cfg.out_dir) / "theta_used.json").string();
  save_theta(art.theta_file, layout, gather_theta(layout, mhe_theta, mpc_theta));
  return art;
}

}  // namespace lpvrl
