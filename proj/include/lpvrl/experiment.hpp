#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpvrl/lpv_plant.hpp"
#include "lpvrl/mhe.hpp"
#include "lpvrl/mpc.hpp"
#include "lpvrl/rl.hpp"

namespace lpvrl {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Experiment definition, loaded from a flat-key JSON document. Unknown keys
/// are rejected; the seed must be given explicitly so runs are reproducible.
struct ExperimentConfig {
  SchedulingBounds true_bounds;    // used by the simulated plant
  SchedulingBounds design_bounds;  // used by the MHE/MPC vertex models
  double h = 0.05;
  int horizon = 10;
  double gamma = 0.95;
  int episode_steps = 200;
  int episodes_per_iteration = 5;
  int rl_iterations = 60;
  int eval_episodes = 3;
  double alpha = 1e-3;
  double exploration = 0.1;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 1000;
  double u_min = -1.0, u_max = 1.0;
  double stage_cost_qy = 1.0, stage_cost_ra = 0.1;
  double slack_weight = 1e3, slack_weight_terminal = 1e3;
  bool state_box = false;
  Eigen::VectorXd x_min, x_max;
  double measurement_noise_std = 0.0;
  ScheduleMode schedule_mode = ScheduleMode::ConstantPerEpisode;
  std::vector<std::string> learned_slices{"L_A", "L_R", "L_P", "f"};
  std::string theta_init_path;
  std::string out_dir = "run_out";
  bool debug_traces = false;

  MpcConfig mpc_config() const;
  MheConfig mhe_config() const;
  void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

struct InvariantStats {
  double max_abs_u = 0.0;
  double max_simplex_violation = 0.0;
  double min_beta_entry = 1.0;
  long estimator_fallbacks = 0;
  long dropped_transitions = 0;
  long total_steps = 0;
  void merge(const InvariantStats& other);
};

struct EpisodeRecord {
  int episode = 0;
  int k = 0;
  double t = 0.0;
  double y = 0.0;
  Eigen::VectorXd x_true, x_hat;
  Eigen::VectorXd beta, beta_true;
  double u_applied = 0.0;
  double u_policy = 0.0;
  double stage_cost = 0.0;
  bool valid = false;
};

struct EpisodeResult {
  std::vector<Transition> transitions;
  std::vector<EpisodeRecord> records;
  double discounted_return = 0.0;
  double final_abs_position = 0.0;
  InvariantStats stats;
};

struct EpisodeOptions {
  bool explore = false;
  bool collect_gradients = false;
  std::uint64_t seed = 0;
  int episode_index = 0;
  const Eigen::VectorXd* x0_override = nullptr;
};

/// One closed-loop rollout: measure, estimate, schedule, solve the MPC,
/// explore, apply to the true plant, record. The discounted return is
/// sum_k gamma^k L(y_k, a_k).
EpisodeResult run_episode(const ExperimentConfig& cfg, const MheTheta& mhe_theta,
                          const MpcTheta& mpc_theta, const ThetaLayout& layout,
                          const EpisodeOptions& opts);

struct LearnTraceRow {
  int iteration = 0;
  double j_train = 0.0;
  double j_eval = 0.0;
  double b_theta_inf = 0.0;
  double alpha_used = 0.0;
  bool rejected = false;
  double cond_nu = 0.0;
  double cond_w = 0.0;
  long valid_transitions = 0;
  long dropped_transitions = 0;
  std::vector<double> slice_norms;
};

struct RunArtifacts {
  std::string out_dir;
  std::vector<std::string> episode_csvs;
  std::string learning_trace_csv;
  std::string theta_file;
  std::string config_echo;
  InvariantStats stats;
  std::vector<LearnTraceRow> trace;
  double initial_eval = 0.0;
  double final_eval = 0.0;
  double final_eval_max_abs_position = 0.0;
};

/// Optional early-stop rule for learning runs: finish once the evaluation
/// return drops to eval_ratio of the iteration-0 value and the evaluation
/// episodes end within final_position of the origin.
struct LearnStop {
  double eval_ratio = 0.0;
  double final_position = 0.0;
};

/// Full learning run: per iteration, m exploratory episodes feed the LSTD
/// critic and a projected policy-gradient step, followed by fixed-seed
/// evaluation episodes. Aborts after more than 10 consecutive rejected
/// updates.
RunArtifacts learn(const ExperimentConfig& cfg, const LearnStop* stop = nullptr);

/// Evaluation episodes under a fixed theta (defaults or a loaded snapshot).
RunArtifacts simulate(const ExperimentConfig& cfg, const std::string& theta_path = "");

void write_episode_csv(const std::string& path, const std::vector<EpisodeRecord>& records,
                       const ExperimentConfig& cfg);
void write_learning_trace_csv(const std::string& path, const std::vector<LearnTraceRow>& rows,
                              const ThetaLayout& layout);

void save_theta(const std::string& path, const ThetaLayout& layout, const Eigen::VectorXd& theta);
Eigen::VectorXd load_theta(const std::string& path, const ThetaLayout& layout);

/// Initial module parameters for a config (Riccati terminal weights on the
/// design model, identity/scaled-identity estimator weights).
void initial_thetas(const ExperimentConfig& cfg, MheTheta& mhe_theta, MpcTheta& mpc_theta);

}  // namespace lpvrl
