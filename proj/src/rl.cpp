#include "lpvrl/rl.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lpvrl/linalg.hpp"

namespace lpvrl {

ThetaLayout ThetaLayout::build(const std::vector<std::string>& names, int n, int m, int e, int l,
                               int n_eps) {
  ThetaLayout layout;
  layout.n = n;
  layout.m = m;
  layout.e = e;
  layout.l = l;
  layout.n_eps = n_eps;

  const int tri_n = tri_size(n), tri_e = tri_size(e), tri_m = tri_size(m);
  // local offsets within MheTheta::pack and MpcTheta::pack
  const int mhe_LA = 0, mhe_LR = tri_n;
  auto mpc_LP = [&](int i) { return i * tri_n; };
  const int mpc_f = l * tri_n;
  const int mpc_LW = mpc_f + n + m;
  const int mpc_LRu = mpc_LW + tri_n;
  const int mpc_eps = mpc_LRu + tri_m;

  auto add = [&](const std::string& name, int size, bool is_mhe, int local) {
    layout.slices.push_back({name, layout.dim, size, is_mhe, local});
    layout.dim += size;
  };

  for (const auto& name : names) {
    if (name == "L_A") add(name, tri_n, true, mhe_LA);
    else if (name == "L_R") add(name, tri_e, true, mhe_LR);
    else if (name == "L_P") {
      for (int i = 0; i < l; ++i) add("L_P" + std::to_string(i + 1), tri_n, false, mpc_LP(i));
    } else if (name.rfind("L_P", 0) == 0 && name.size() > 3) {
      const int i = std::stoi(name.substr(3)) - 1;
      if (i < 0 || i >= l) throw std::invalid_argument("ThetaLayout: bad vertex in " + name);
      add(name, tri_n, false, mpc_LP(i));
    } else if (name == "f") add(name, n + m, false, mpc_f);
    else if (name == "L_W") add(name, tri_n, false, mpc_LW);
    else if (name == "L_Ru") add(name, tri_m, false, mpc_LRu);
    else if (name == "eps") {
      if (n_eps == 0) throw std::invalid_argument("ThetaLayout: eps requested without state box");
      add(name, n_eps, false, mpc_eps);
    } else {
      throw std::invalid_argument("ThetaLayout: unknown slice name " + name);
    }
  }
  // slices must not overlap
  for (std::size_t a = 0; a < layout.slices.size(); ++a)
    for (std::size_t b = a + 1; b < layout.slices.size(); ++b)
      if (layout.slices[a].name == layout.slices[b].name)
        throw std::invalid_argument("ThetaLayout: duplicate slice " + layout.slices[a].name);
  return layout;
}

const ThetaSlice* ThetaLayout::find(const std::string& name) const {
  for (const auto& s : slices)
    if (s.name == name) return &s;
  return nullptr;
}

Eigen::VectorXd gather_theta(const ThetaLayout& layout, const MheTheta& mhe,
                             const MpcTheta& mpc) {
  const Eigen::VectorXd mhe_packed = mhe.pack();
  const Eigen::VectorXd mpc_packed = mpc.pack();
  Eigen::VectorXd theta(layout.dim);
  for (const auto& s : layout.slices)
    theta.segment(s.offset, s.size) =
        (s.is_mhe ? mhe_packed : mpc_packed).segment(s.local_offset, s.size);
  return theta;
}

void scatter_theta(const ThetaLayout& layout, const Eigen::VectorXd& theta, MheTheta& mhe,
                   MpcTheta& mpc, const MpcConfig& cfg) {
  if (theta.size() != layout.dim)
    throw std::invalid_argument("scatter_theta: theta size does not match layout");
  Eigen::VectorXd mhe_packed = mhe.pack();
  Eigen::VectorXd mpc_packed = mpc.pack();
  for (const auto& s : layout.slices)
    (s.is_mhe ? mhe_packed : mpc_packed).segment(s.local_offset, s.size) =
        theta.segment(s.offset, s.size);
  mhe.unpack(mhe_packed);
  mpc.unpack(mpc_packed);

  // projection: factor-diagonal floors and eps clipping
  const double floor = 1e-4;
  floor_factor_diagonal(mhe.L_A, floor);
  floor_factor_diagonal(mhe.L_R, floor);
  for (auto& L : mpc.L_P) floor_factor_diagonal(L, floor);
  floor_factor_diagonal(mpc.L_W, floor);
  floor_factor_diagonal(mpc.L_Ru, floor);
  if (cfg.has_state_box) {
    const int n = static_cast<int>(mpc.L_W.rows());
    for (int i = 0; i < n; ++i) {
      const double half = 0.5 * (cfg.x_max(i) - cfg.x_min(i));
      mpc.eps(i) = std::clamp(mpc.eps(i), -half, half);
      mpc.eps(n + i) = std::clamp(mpc.eps(n + i), -half, half);
    }
  }
}

double stage_cost(const Eigen::VectorXd& y, const Eigen::VectorXd& a, double qy, double ra) {
  if (!y.allFinite() || !a.allFinite())
    throw std::invalid_argument("stage_cost: non-finite input");
  return qy * y.squaredNorm() + ra * a.squaredNorm();
}

Eigen::MatrixXd jacobian_xi(const MpcSolution& mpc, const MheSolution& mhe,
                            const ThetaLayout& layout) {
  const int m = static_cast<int>(mpc.u0.size());
  const int n = layout.n;
  const int l = layout.l;
  const int Nw = mhe.window_length();
  if (mpc.dpi_dbeta.rows() != l * (Nw + 1))
    throw std::invalid_argument("jacobian_xi: schedule/window layout mismatch");
  if (mhe.dxhat_dtheta.cols() != n)
    throw std::invalid_argument("jacobian_xi: MHE sensitivity layout mismatch");

  // Fold the schedule sensitivity onto the window's beta stages: stage j
  // receives schedule position j, and stage 1 also receives position 0.
  Eigen::MatrixXd folded = Eigen::MatrixXd::Zero(l * Nw, m);
  for (int j = 1; j <= Nw; ++j) folded.middleRows((j - 1) * l, l) = mpc.dpi_dbeta.middleRows(j * l, l);
  folded.topRows(l) += mpc.dpi_dbeta.topRows(l);

  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(layout.dim, m);
  for (const auto& s : layout.slices) {
    if (s.is_mhe) {
      xi.middleRows(s.offset, s.size) +=
          mhe.dxhat_dtheta.middleRows(s.local_offset, s.size) * mpc.dpi_dxhat;
      xi.middleRows(s.offset, s.size) +=
          mhe.dbeta_dtheta.middleRows(s.local_offset, s.size) * folded;
    } else {
      xi.middleRows(s.offset, s.size) += mpc.dpi_dtheta.middleRows(s.local_offset, s.size);
    }
  }
  return xi;
}

int upsilon_dim(int n) { return 1 + n + n * (n + 1) / 2; }

Eigen::VectorXd features_upsilon(const Eigen::VectorXd& xhat) {
  if (!xhat.allFinite()) throw std::invalid_argument("features_upsilon: non-finite input");
  const int n = static_cast<int>(xhat.size());
  Eigen::VectorXd u(upsilon_dim(n));
  int k = 0;
  u(k++) = 1.0;
  for (int i = 0; i < n; ++i) u(k++) = xhat(i);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) u(k++) = xhat(i) * xhat(j);
  return u;
}

Eigen::VectorXd features_psi(const Transition& t) {
  if (!t.valid) throw std::invalid_argument("features_psi: invalid transition");
  return t.xi * (t.action - t.pi);
}

LstdAccumulators LstdAccumulators::zero(int n_upsilon, int n_theta) {
  LstdAccumulators acc;
  acc.A_nu = Eigen::MatrixXd::Zero(n_upsilon, n_upsilon);
  acc.A_w = Eigen::MatrixXd::Zero(n_theta, n_theta);
  acc.b_nu = Eigen::VectorXd::Zero(n_upsilon);
  acc.b_w = Eigen::VectorXd::Zero(n_theta);
  acc.b_theta = Eigen::VectorXd::Zero(n_theta);
  return acc;
}

void lstd_accumulate(const std::vector<Transition>& batch, LstdAccumulators& acc, double gamma,
                     const CriticParams& critic) {
  const int n_ups = static_cast<int>(acc.A_nu.rows());
  const int n_theta = static_cast<int>(acc.A_w.rows());
  const bool have_nu = critic.nu.size() == n_ups;
  const bool have_w = critic.w.size() == n_theta;

  for (const Transition& t : batch) {
    if (!t.valid || !t.xi.allFinite()) {
      acc.skipped += 1;
      continue;
    }
    const Eigen::VectorXd ups = features_upsilon(t.xhat);
    const Eigen::VectorXd ups_next = features_upsilon(t.xhat_next);
    const Eigen::VectorXd psi = t.xi * (t.action - t.pi);

    acc.A_nu += ups * (ups - gamma * ups_next).transpose();
    acc.b_nu += ups * t.stage_cost;
    acc.A_w += psi * psi.transpose();
    if (have_nu) {
      const double td = t.stage_cost + gamma * ups_next.dot(critic.nu) - ups.dot(critic.nu);
      acc.b_w += td * psi;
    }
    if (have_w) acc.b_theta += t.xi * (t.xi.transpose() * critic.w);
    acc.count += 1;
  }
}

CriticParams critic_solve(const LstdAccumulators& acc) {
  CriticParams out;
  const int n_ups = static_cast<int>(acc.A_nu.rows());
  const int n_theta = static_cast<int>(acc.A_w.rows());
  const long floor = 10L * std::max(n_ups, n_theta);
  if (acc.count < floor) {
    out.reject_reason = "insufficient valid samples";
    return out;
  }

  const double reg = 1e-6;
  const double scale = static_cast<double>(acc.count);
  const Eigen::MatrixXd An = acc.A_nu / scale + reg * Eigen::MatrixXd::Identity(n_ups, n_ups);
  const Eigen::MatrixXd Aw = acc.A_w / scale + reg * Eigen::MatrixXd::Identity(n_theta, n_theta);

  auto cond_of = [](const Eigen::MatrixXd& M) {
    if (M.rows() == 0) return 1.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues()(0) / svd.singularValues().tail(1)(0);
  };
  out.cond_nu = cond_of(An);
  out.cond_w = cond_of(Aw);
  if (out.cond_nu > 1e12 || out.cond_w > 1e12) {
    out.reject_reason = "conditioning estimate above 1e12";
    return out;
  }

  out.nu = Eigen::PartialPivLU<Eigen::MatrixXd>(An).solve(acc.b_nu / scale);
  out.w = n_theta > 0
              ? Eigen::PartialPivLU<Eigen::MatrixXd>(Aw).solve(acc.b_w / scale).eval()
              : Eigen::VectorXd();
  out.ok = out.nu.allFinite() && out.w.allFinite();
  if (!out.ok) out.reject_reason = "non-finite critic solution";
  return out;
}

PolicyUpdateResult policy_update(const Eigen::VectorXd& theta, const Eigen::VectorXd& b_theta,
                                 long count, double alpha,
                                 const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& project,
                                 const std::function<bool(const Eigen::VectorXd&)>& probe) {
  if (!b_theta.allFinite()) throw std::invalid_argument("policy_update: non-finite gradient");
  if (count < 1) throw std::invalid_argument("policy_update: empty batch");

  PolicyUpdateResult res;
  res.theta = theta;
  double a = alpha;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Eigen::VectorXd candidate = project(theta - (a / static_cast<double>(count)) * b_theta);
    if (probe(candidate)) {
      res.theta = std::move(candidate);
      res.accepted = true;
      res.alpha_used = a;
      res.retries = attempt;
      return res;
    }
    a *= 0.5;
  }
  res.retries = 4;
  return res;
}

}  // namespace lpvrl
