#include "rndkit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rndkit::optim {

BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x, const BfgsOptions& options) {
    const Eigen::Index n = x.size();
    BfgsResult out;
    Eigen::VectorXd g(n);
    double fx = f(x, &g);
    if (!std::isfinite(fx)) {
        out.x = x;
        out.value = fx;
        out.gradient = g;
        out.message = "objective not finite at start";
        return out;
    }
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
    bool scaled = false;
    Eigen::VectorXd g_new(n);
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
            out.converged = true;
            break;
        }
        Eigen::VectorXd dir = -hinv * g;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            hinv.setIdentity();
            dir = -g;
            slope = -g.squaredNorm();
        }
        // Backtracking line search with an Armijo test.
        double step = 1.0;
        double f_new = fx;
        Eigen::VectorXd x_new = x;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = f(x_new, &g_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= (ls < 2 ? 0.5 : 0.2);
        }
        if (!accepted) {
            if (scaled) {
                // retry once from steepest descent with a fresh metric
                hinv.setIdentity();
                scaled = false;
                continue;
            }
            out.message = "line search failed";
            break;
        }
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        x = x_new;
        const double f_old = fx;
        fx = f_new;
        g = g_new;
        if (s.lpNorm<Eigen::Infinity>() <= options.step_tolerance * (1.0 + x.lpNorm<Eigen::Infinity>()) &&
            std::abs(f_old - fx) <= 1e-15 * (1.0 + std::abs(fx))) {
            out.message = "step below tolerance";
            break;
        }
        const double sy = s.dot(y);
        if (sy > 1e-300) {
            if (!scaled) {
                hinv *= sy / y.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Eigen::VectorXd hy = hinv * y;
            hinv += ((sy + y.dot(hy)) * rho * rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
        }
    }
    out.x = x;
    out.value = fx;
    out.gradient = g;
    out.gradient_norm = g.lpNorm<Eigen::Infinity>();
    out.iterations = it;
    if (out.gradient_norm <= options.gradient_tolerance) out.converged = true;
    if (out.converged) out.message = "converged";
    return out;
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double rel_step) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * std::max(1.0, std::abs(x[i]));
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

namespace {

Eigen::VectorXd project(Eigen::VectorXd x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

// Gradient with components pointing out of the box at active bounds removed.
Eigen::VectorXd projected_gradient(const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
    Eigen::VectorXd pg = g;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if ((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)) pg[i] = 0.0;
    }
    return pg;
}

}  // namespace

LmResult minimize_lm(const Residuals& residuals, Eigen::VectorXd x, const Eigen::VectorXd& lower,
                     const Eigen::VectorXd& upper, const LmOptions& options) {
    const Eigen::Index n = x.size();
    x = project(std::move(x), lower, upper);
    Eigen::VectorXd r = residuals(x);
    double cost = 0.5 * r.squaredNorm();
    LmResult out;
    double mu = -1.0;
    Eigen::MatrixXd jac(r.size(), n);
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        // forward-difference Jacobian, stepping inward at the upper bound
        for (Eigen::Index j = 0; j < n; ++j) {
            double h = options.fd_step * std::max(1.0, std::abs(x[j]));
            if (x[j] + h > upper[j]) h = -h;
            if (x[j] + h < lower[j]) {
                // fixed coordinate (zero-width box)
                jac.col(j).setZero();
                continue;
            }
            Eigen::VectorXd xp = x;
            xp[j] += h;
            jac.col(j) = (residuals(xp) - r) / h;
        }
        const Eigen::VectorXd g = jac.transpose() * r;
        const Eigen::VectorXd pg = projected_gradient(g, x, lower, upper);
        out.gradient_norm = pg.lpNorm<Eigen::Infinity>();
        if (out.gradient_norm <= options.gradient_tolerance || cost <= options.cost_tolerance) {
            out.converged = true;
            break;
        }
        Eigen::MatrixXd jtj = jac.transpose() * jac;
        if (mu < 0.0) mu = 1e-3 * std::max(1e-12, jtj.diagonal().maxCoeff());
        bool improved = false;
        for (int tries = 0; tries < 30; ++tries) {
            Eigen::MatrixXd a = jtj;
            for (Eigen::Index j = 0; j < n; ++j) a(j, j) += mu * std::max(jtj(j, j), 1e-12);
            const Eigen::VectorXd step = a.ldlt().solve(-g);
            const Eigen::VectorXd x_new = project(x + step, lower, upper);
            const Eigen::VectorXd r_new = residuals(x_new);
            const double cost_new = 0.5 * r_new.squaredNorm();
            if (std::isfinite(cost_new) && cost_new < cost) {
                const double rel_step = (x_new - x).norm() / (1e-12 + x.norm());
                x = x_new;
                r = r_new;
                const double drop = cost - cost_new;
                cost = cost_new;
                mu = std::max(mu / 3.0, 1e-15);
                improved = true;
                if (rel_step <= options.step_tolerance && drop <= 1e-14 * (cost + 1e-300)) {
                    out.converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if (!improved || out.converged) {
            out.converged = out.converged || out.gradient_norm <= 1e3 * options.gradient_tolerance;
            ++it;
            break;
        }
    }
    out.x = x;
    out.cost = cost;
    out.iterations = it;
    return out;
}

}  // namespace rndkit::optim
