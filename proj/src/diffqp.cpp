#include "bnet/diffqp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace bnet {

std::string to_string(QPStatus status) {
  switch (status) {
    case QPStatus::Optimal: return "optimal";
    case QPStatus::Infeasible: return "infeasible";
    case QPStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

int QPProblem::num_total_rows() const {
  const int q = num_vars();
  return num_rows() + (ub ? q : 0) + (lb ? q : 0);
}

void QPProblem::assembled(Eigen::MatrixXd& G_all, Eigen::VectorXd& h_all) const {
  const int q = num_vars();
  const int m = num_total_rows();
  G_all.resize(m, q);
  h_all.resize(m);
  int r = 0;
  if (num_rows() > 0) {
    G_all.topRows(num_rows()) = G;
    h_all.head(num_rows()) = h;
    r = num_rows();
  }
  if (ub) {
    G_all.middleRows(r, q) = Eigen::MatrixXd::Identity(q, q);
    h_all.segment(r, q) = *ub;
    r += q;
  }
  if (lb) {
    G_all.middleRows(r, q) = -Eigen::MatrixXd::Identity(q, q);
    h_all.segment(r, q) = -*lb;
  }
}

void QPProblem::validate() const {
  const int q = num_vars();
  if (q == 0) throw std::invalid_argument("QPProblem: empty problem");
  if (H.rows() != q || H.cols() != q) throw std::invalid_argument("QPProblem: H must be q x q");
  if (G.rows() != h.size() || (G.rows() > 0 && G.cols() != q)) {
    throw std::invalid_argument("QPProblem: G/h dimensions inconsistent");
  }
  if ((lb && lb->size() != q) || (ub && ub->size() != q)) {
    throw std::invalid_argument("QPProblem: bound dimensions inconsistent");
  }
  if (!H.allFinite() || !F.allFinite() || !G.allFinite() || !h.allFinite()) {
    throw std::invalid_argument("QPProblem: non-finite data");
  }
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + H.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("QPProblem: H must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < 1e-8) {
    throw std::invalid_argument("QPProblem: H must be positive definite (min eigenvalue >= 1e-8)");
  }
}

namespace {

double max_step(const Eigen::VectorXd& x, const Eigen::VectorXd& dx) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (dx(i) < 0.0) a = std::min(a, -x(i) / dx(i));
  }
  return a;
}

QPResiduals residuals_of(const Eigen::MatrixXd& H, const Eigen::VectorXd& F, const Eigen::MatrixXd& G,
                         const Eigen::VectorXd& h, const Eigen::VectorXd& u, const Eigen::VectorXd& lam) {
  QPResiduals r;
  Eigen::VectorXd rd = H * u + F;
  if (G.rows() > 0) {
    rd += G.transpose() * lam;
    const Eigen::VectorXd slack = h - G * u;
    r.primal = std::max(0.0, (-slack).maxCoeff());
    r.gap = slack.cwiseMax(0.0).cwiseProduct(lam).cwiseAbs().sum() / static_cast<double>(G.rows());
  }
  r.dual = rd.cwiseAbs().maxCoeff();
  return r;
}

// Equality-constrained KKT on a candidate active set:
//   [H  Ga'] [u]   [-F]
//   [Ga  0 ] [l] = [ha]
bool polish(const Eigen::MatrixXd& H, const Eigen::VectorXd& F, const Eigen::MatrixXd& G,
            const Eigen::VectorXd& h, const std::vector<int>& active, double tol, Eigen::VectorXd& u,
            Eigen::VectorXd& lam) {
  const int q = static_cast<int>(F.size());
  const int na = static_cast<int>(active.size());
  if (na > q) return false;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(q + na, q + na);
  Eigen::VectorXd rhs(q + na);
  K.topLeftCorner(q, q) = H;
  rhs.head(q) = -F;
  for (int j = 0; j < na; ++j) {
    K.block(q + j, 0, 1, q) = G.row(active[j]);
    K.block(0, q + j, q, 1) = G.row(active[j]).transpose();
    rhs(q + j) = h(active[j]);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (lu.rank() < q + na) return false;
  const Eigen::VectorXd sol = lu.solve(rhs);
  Eigen::VectorXd lam_new = Eigen::VectorXd::Zero(G.rows());
  for (int j = 0; j < na; ++j) {
    if (sol(q + j) < -tol) return false;
    lam_new(active[j]) = std::max(0.0, sol(q + j));
  }
  const Eigen::VectorXd u_new = sol.head(q);
  if (G.rows() > 0 && (G * u_new - h).maxCoeff() > tol) return false;
  u = u_new;
  lam = lam_new;
  return true;
}

}  // namespace

QPSolution qp_solve(const QPProblem& problem, double tol, int max_iter) {
  problem.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("qp_solve: tol must be > 0");

  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  problem.assembled(G, h);
  const Eigen::MatrixXd& H = problem.H;
  const Eigen::VectorXd& F = problem.F;
  const int q = problem.num_vars();
  const int m = static_cast<int>(G.rows());

  QPSolution sol;
  Eigen::LLT<Eigen::MatrixXd> llt_h(H);
  Eigen::VectorXd u = llt_h.solve(-F);

  if (m == 0) {
    sol.u_star = u;
    sol.duals.resize(0);
    sol.status = QPStatus::Optimal;
    sol.residuals = residuals_of(H, F, G, h, u, sol.duals);
    return sol;
  }

  const double scale_p = 1.0 + h.cwiseAbs().maxCoeff();
  const double scale_d = 1.0 + F.cwiseAbs().maxCoeff();

  Eigen::VectorXd s = (h - G * u).cwiseMax(1.0);
  Eigen::VectorXd lam = Eigen::VectorXd::Ones(m);
  const double n = static_cast<double>(m);

  Eigen::VectorXd rd, rp, rc, du, ds, dl, du_aff, ds_aff, dl_aff;
  bool converged = false;
  bool infeasible = false;
  int it = 0;

  for (; it < max_iter; ++it) {
    rd = H * u + F + G.transpose() * lam;
    rp = G * u + s - h;
    const double mu = s.dot(lam) / n;
    if (rd.cwiseAbs().maxCoeff() <= tol * scale_d && rp.cwiseAbs().maxCoeff() <= tol * scale_p && mu <= tol) {
      converged = true;
      break;
    }

    // Farkas certificate for {G u <= h}: lam >= 0, G' lam = 0, h' lam < 0.
    const double lam_norm = lam.sum();
    if (lam_norm > 1e6) {
      const Eigen::VectorXd lhat = lam / lam_norm;
      const double gt = (G.transpose() * lhat).cwiseAbs().maxCoeff();
      const double hl = h.dot(lhat);
      if (gt <= 1e-6 * (1.0 + G.cwiseAbs().maxCoeff()) && hl < -1e-9 * scale_p) {
        infeasible = true;
        break;
      }
    }

    const Eigen::VectorXd w = lam.cwiseQuotient(s);
    const Eigen::MatrixXd M = H + G.transpose() * w.asDiagonal() * G;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success) break;

    auto solve_dir = [&](const Eigen::VectorXd& r_c, Eigen::VectorXd& du_, Eigen::VectorXd& ds_,
                         Eigen::VectorXd& dl_) {
      // M du = -rd + G' S^-1 (r_c - Lam rp)
      const Eigen::VectorXd tmp = (r_c - lam.cwiseProduct(rp)).cwiseQuotient(s);
      du_ = llt.solve(-rd + G.transpose() * tmp);
      ds_ = -rp - G * du_;
      dl_ = (-r_c - lam.cwiseProduct(ds_)).cwiseQuotient(s);
    };

    rc = s.cwiseProduct(lam);
    solve_dir(rc, du_aff, ds_aff, dl_aff);
    const double a_aff = std::min(max_step(s, ds_aff), max_step(lam, dl_aff));
    const double mu_aff = (s + a_aff * ds_aff).dot(lam + a_aff * dl_aff) / n;
    const double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3);

    rc = s.cwiseProduct(lam) + ds_aff.cwiseProduct(dl_aff) - Eigen::VectorXd::Constant(m, sigma * mu);
    solve_dir(rc, du, ds, dl);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(lam, dl)));
    u += a * du;
    s += a * ds;
    lam += a * dl;
  }

  sol.iterations = it;
  if (infeasible) {
    sol.status = QPStatus::Infeasible;
  } else if (converged) {
    sol.status = QPStatus::Optimal;
  } else {
    // Out of iterations: call it infeasible when the primal residual is
    // still large and the multipliers have blown up.
    rp = G * u + s - h;
    sol.status = (rp.cwiseAbs().maxCoeff() > 1e-4 * scale_p && lam.sum() > 1e4) ? QPStatus::Infeasible
                                                                                  : QPStatus::MaxIter;
  }

  if (sol.status == QPStatus::Optimal) {
    std::vector<int> active;
    for (int i = 0; i < m; ++i) {
      if (lam(i) > s(i)) active.push_back(i);
    }
    sol.polished = polish(H, F, G, h, active, std::max(tol, 1e-9) * scale_p, u, lam);
  }

  sol.u_star = u;
  sol.duals = lam;
  sol.residuals = residuals_of(H, F, G, h, u, lam);
  (void)q;
  return sol;
}

// Linearizing the KKT system at (u, lam) and restricting to the active set A
// (strict complementarity), the adjoint system is
//   [H   Ga'] [a]   [grad_u]
//   [Ga  0  ] [c] = [0     ]
// and the data gradients are
//   dF = -a,  dh_A = c,  dG_A = -lam_A a' - c u',  dH = -(a u' + u a') / 2,
// with zero rows for inactive constraints.
QPGradients qp_backward(const QPProblem& problem, const QPSolution& solution, const Eigen::VectorXd& grad_u,
                        double damping) {
  if (solution.status != QPStatus::Optimal) {
    throw std::invalid_argument("qp_backward: solution is not optimal");
  }
  const int q = problem.num_vars();
  if (grad_u.size() != q) throw std::invalid_argument("qp_backward: grad_u has wrong size");

  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  problem.assembled(G, h);
  const int m = static_cast<int>(G.rows());
  const Eigen::VectorXd& u = solution.u_star;
  const Eigen::VectorXd& lam = solution.duals;

  QPGradients out;
  const double scale = 1.0 + (m > 0 ? h.cwiseAbs().maxCoeff() : 0.0);
  const double act_tol = 1e-7 * scale;
  std::vector<int> active;
  bool degenerate = false;
  for (int i = 0; i < m; ++i) {
    const double slack = h(i) - G.row(i).dot(u);
    if (lam(i) > 0.0 && lam(i) >= slack) {
      active.push_back(i);
    } else if (std::abs(slack) <= act_tol && lam(i) <= act_tol) {
      active.push_back(i);  // weakly active
      degenerate = true;
    }
  }
  const int na = static_cast<int>(active.size());
  out.active_rows = na;

  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(q + na, q + na);
  K.topLeftCorner(q, q) = problem.H;
  for (int j = 0; j < na; ++j) {
    K.block(q + j, 0, 1, q) = G.row(active[j]);
    K.block(0, q + j, q, 1) = G.row(active[j]).transpose();
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q + na);
  rhs.head(q) = grad_u;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (degenerate || lu.rank() < q + na) {
    out.damped = true;
    K.bottomRightCorner(na, na) -= damping * Eigen::MatrixXd::Identity(na, na);
    lu.compute(K);
  }
  const Eigen::VectorXd sol = lu.solve(rhs);
  const Eigen::VectorXd a = sol.head(q);

  Eigen::VectorXd c_all = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < na; ++j) c_all(active[j]) = sol(q + j);

  out.dF = -a;
  out.dH = -0.5 * (a * u.transpose() + u * a.transpose());
  // Inactive rows keep exactly zero gradient.
  Eigen::MatrixXd dG_masked = Eigen::MatrixXd::Zero(m, q);
  for (int j = 0; j < na; ++j) {
    const int i = active[j];
    dG_masked.row(i) = -lam(i) * a.transpose() - c_all(i) * u.transpose();
  }

  const int nc = problem.num_rows();
  out.dG = dG_masked.topRows(nc);
  out.dh = c_all.head(nc);
  int r = nc;
  if (problem.ub) {
    out.dub = c_all.segment(r, q);
    r += q;
  }
  if (problem.lb) out.dlb = -c_all.segment(r, q);
  return out;
}

}  // namespace bnet
