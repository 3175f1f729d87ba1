#pragma once

// Dense linear algebra aliases and the two generic solvers used throughout:
// a limited-memory quasi-Newton minimizer and an exact quadratic solver,
// plus a central-difference gradient oracle and the smoothed L1 penalty.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <utility>

#include "penc/errors.hpp"

namespace penc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Objective callable: returns f(x) and fills grad with the gradient at x.
using ObjectiveWithGrad = std::function<double(const Vector& x, Vector& grad)>;
/// Value-only objective, as consumed by finite_difference_gradient.
using ObjectiveValue = std::function<double(const Vector& x)>;

struct MinimizeOptions {
    int max_iterations = 100;
    double gradient_tolerance = 1e-8; // infinity-norm threshold
    int history_size = 10;            // quasi-Newton memory m
    int line_search_max_steps = 40;

    void validate() const {
        if (max_iterations < 1) throw InvalidArgument("MinimizeOptions: max_iterations must be >= 1");
        if (!(gradient_tolerance > 0)) throw InvalidArgument("MinimizeOptions: gradient_tolerance must be > 0");
        if (history_size < 1) throw InvalidArgument("MinimizeOptions: history_size must be >= 1");
        if (line_search_max_steps < 1) throw InvalidArgument("MinimizeOptions: line_search_max_steps must be >= 1");
    }
};

struct MinimizeResult {
    Vector x;
    double value = 0.0;
    int iterations = 0;
};

/// Limited-memory BFGS with two-loop recursion and a backtracking Armijo
/// line search. Accepted values are non-increasing by construction; when the
/// line search fails along the quasi-Newton direction the step degrades to
/// damped steepest descent rather than aborting.
inline MinimizeResult lbfgs_minimize(const ObjectiveWithGrad& objective, const Vector& x0,
                                     const MinimizeOptions& opts = {}) {
    opts.validate();
    if (!x0.allFinite()) throw NonFiniteObjective("lbfgs_minimize: x0 is not finite");

    const double armijo_c1 = 1e-4;

    Vector x = x0;
    Vector grad(x.size());
    double value = objective(x, grad);
    if (!std::isfinite(value) || !grad.allFinite())
        throw NonFiniteObjective("lbfgs_minimize: objective not finite at x0");

    struct Correction {
        Vector s, y;
        double rho;
    };
    std::deque<Correction> history;

    int iterations = 0;
    while (iterations < opts.max_iterations) {
        if (grad.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) break;

        // Two-loop recursion for d = -H grad.
        Vector q = grad;
        std::deque<double> alphas;
        for (auto it = history.rbegin(); it != history.rend(); ++it) {
            const double alpha = it->rho * it->s.dot(q);
            q -= alpha * it->y;
            alphas.push_front(alpha);
        }
        if (!history.empty()) {
            const Correction& last = history.back();
            q *= last.s.dot(last.y) / last.y.squaredNorm();
        }
        std::size_t k = 0;
        for (auto it = history.begin(); it != history.end(); ++it, ++k) {
            const double beta = it->rho * it->y.dot(q);
            q += (alphas[k] - beta) * it->s;
        }
        Vector direction = -q;

        double dg = direction.dot(grad);
        if (!(dg < 0) || !direction.allFinite()) {
            // Curvature information unusable; restart from steepest descent.
            history.clear();
            direction = -grad;
            dg = -grad.squaredNorm();
        }

        // Backtracking line search with sufficient decrease.
        double step = history.empty() ? 1.0 / std::max(1.0, grad.norm()) : 1.0;
        bool accepted = false;
        Vector x_new, grad_new(x.size());
        double value_new = value;
        for (int ls = 0; ls < opts.line_search_max_steps; ++ls) {
            x_new = x + step * direction;
            double trial = objective(x_new, grad_new);
            if (std::isfinite(trial) && trial <= value + armijo_c1 * step * dg) {
                value_new = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }

        if (!accepted) {
            // Steepest-descent fallback with step halving; accept any decrease.
            history.clear();
            direction = -grad;
            step = 1.0 / std::max(1.0, grad.norm());
            for (int ls = 0; ls < 60; ++ls) {
                x_new = x + step * direction;
                double trial = objective(x_new, grad_new);
                if (std::isfinite(trial) && trial < value) {
                    value_new = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break; // no decrease possible at representable steps
        }

        Vector s = x_new - x;
        Vector y = grad_new - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            history.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (static_cast<int>(history.size()) > opts.history_size) history.pop_front();
        }

        x = std::move(x_new);
        grad = grad_new;
        value = value_new;
        ++iterations;
    }

    return {std::move(x), value, iterations};
}

/// Minimizes 1/2 x^T H x + g^T x for symmetric PSD H, i.e. solves H x = -g.
/// Cholesky first; ridge-regularized retry (eps = 1e-10 tr(H)/n) when the
/// factorization fails on a rank-deficient system.
inline Vector solve_quadratic(const Matrix& H, const Vector& g) {
    if (H.rows() != H.cols())
        throw DimensionMismatch("solve_quadratic: H must be square");
    if (g.size() != H.rows())
        throw DimensionMismatch("solve_quadratic: dim(g) must equal rows(H)");

    Eigen::LLT<Matrix> llt(H);
    if (llt.info() == Eigen::Success) {
        Vector x = llt.solve(-g);
        if (x.allFinite()) return x;
    }

    const double eps = 1e-10 * H.trace() / static_cast<double>(H.rows());
    if (eps > 0) {
        Matrix ridged = H;
        ridged.diagonal().array() += eps;
        Eigen::LLT<Matrix> llt2(ridged);
        if (llt2.info() == Eigen::Success) {
            Vector x = llt2.solve(-g);
            if (x.allFinite()) return x;
        }
    }
    throw SingularSystem("solve_quadratic: system singular beyond ridge fallback");
}

/// Central-difference gradient, component i = (f(x+h e_i) - f(x-h e_i)) / 2h.
inline Vector finite_difference_gradient(const ObjectiveValue& objective, const Vector& x,
                                         double step = 1e-5) {
    if (!(step > 0)) throw InvalidArgument("finite_difference_gradient: step must be > 0");
    Vector grad(x.size());
    Vector probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double fp = objective(probe);
        probe[i] = x[i] - step;
        const double fm = objective(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NonFiniteObjective("finite_difference_gradient: objective not finite near x");
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

/// Smooth surrogate for the L1 norm: sum_i sqrt(z_i^2 + eps).
/// Upper-bounds |z|_1 and converges to it from above as eps -> 0.
inline std::pair<double, Vector> smoothed_l1(const Vector& z, double eps = 1e-6) {
    if (!(eps > 0)) throw InvalidArgument("smoothed_l1: eps must be > 0");
    double value = 0.0;
    Vector grad(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double root = std::sqrt(z[i] * z[i] + eps);
        value += root;
        grad[i] = z[i] / root;
    }
    return {value, std::move(grad)};
}

} // namespace penc
