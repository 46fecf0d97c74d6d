#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>

namespace bnet {

/// min 1/2 u'Hu + F'u  s.t.  G u <= h,  lb <= u <= ub (optional).
struct QPProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd F;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  std::optional<Eigen::VectorXd> lb;
  std::optional<Eigen::VectorXd> ub;

  int num_vars() const { return static_cast<int>(F.size()); }
  int num_rows() const { return static_cast<int>(G.rows()); }
  /// Rows after folding the bounds in: G, then ub rows, then lb rows.
  int num_total_rows() const;
  void assembled(Eigen::MatrixXd& G_all, Eigen::VectorXd& h_all) const;
  /// Throws std::invalid_argument on inconsistent sizes, asymmetric H or
  /// min eigenvalue of H below 1e-8.
  void validate() const;
};

enum class QPStatus { Optimal, Infeasible, MaxIter };

std::string to_string(QPStatus status);

struct QPResiduals {
  double primal = 0.0;  // max(G u - h)_+ over all rows
  double dual = 0.0;    // |H u + F + G' lambda|_inf
  double gap = 0.0;     // mean complementarity s' lambda / n
};

struct QPSolution {
  Eigen::VectorXd u_star;
  /// One multiplier per assembled row (see QPProblem::assembled).
  Eigen::VectorXd duals;
  QPStatus status = QPStatus::MaxIter;
  int iterations = 0;
  QPResiduals residuals;
  bool polished = false;
};

/// Gradients of a scalar loss l(u*) with respect to the QP data.
struct QPGradients {
  Eigen::MatrixXd dH;
  Eigen::VectorXd dF;
  Eigen::MatrixXd dG;
  Eigen::VectorXd dh;
  std::optional<Eigen::VectorXd> dlb;
  std::optional<Eigen::VectorXd> dub;
  int active_rows = 0;
  /// Set when the active set was degenerate and the KKT solve was damped.
  bool damped = false;
};


/// Dense primal-dual interior point (Mehrotra predictor-corrector) followed
/// by an active-set polish step.
QPSolution qp_solve(const QPProblem& problem, double tol = 1e-8, int max_iter = 50);

/// Implicit differentiation of the KKT conditions at an optimal solution.
QPGradients qp_backward(const QPProblem& problem, const QPSolution& solution,
                        const Eigen::VectorXd& grad_u, double damping = 1e-8);

}  // namespace bnet
