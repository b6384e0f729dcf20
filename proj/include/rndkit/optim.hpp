#pragma once

// Small dense optimizers shared by the maximum-likelihood and calibration code.

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace rndkit::optim {

/// f(x, grad) returns the objective and, when grad is non-null, writes the
/// gradient into it.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BfgsOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;  // infinity norm
    double step_tolerance = 1e-14;
};

struct BfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd gradient;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string message;
};

/// Minimizes f with BFGS and a backtracking Armijo/Wolfe line search. The
/// returned point never has a larger objective than the start.
BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options = {});

/// Central-difference gradient with per-coordinate relative steps.
Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double rel_step = 1e-6);

/// r(x) returns the residual vector.
using Residuals = std::function<Eigen::VectorXd(const Eigen::VectorXd& x)>;

struct LmOptions {
    int max_iterations = 200;
    double gradient_tolerance = 1e-10;  // inf-norm of J^T r
    double step_tolerance = 1e-10;      // relative
    double cost_tolerance = 1e-16;      // absolute cost floor
    double fd_step = 1e-6;
};

struct LmResult {
    Eigen::VectorXd x;
    double cost = 0.0;  // 0.5 * ||r||^2
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Box-constrained Levenberg-Marquardt with forward-difference Jacobian.
/// Iterates are projected onto [lower, upper]; the cost is monotone
/// nonincreasing over accepted steps.
LmResult minimize_lm(const Residuals& r, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                     const Eigen::VectorXd& upper, const LmOptions& options = {});

}  // namespace rndkit::optim
