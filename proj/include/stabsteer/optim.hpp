#ifndef STABSTEER_OPTIM_HPP
#define STABSTEER_OPTIM_HPP

#include <cmath>
#include <deque>
#include <limits>

#include "core.hpp"

namespace stabsteer {

struct LbfgsOptions {
    int max_iterations = 2000;
    double gradient_tolerance = 1e-6;
    int history = 10;
};

struct LbfgsResult {
    Vector x;
    double value = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Limited-memory BFGS with a backtracking Armijo line search.
/// `objective(x, grad)` returns f(x) and writes the gradient into `grad`.
/// Deterministic for a fixed starting point.
template <class Objective>
LbfgsResult minimize_lbfgs(Objective&& objective, Vector x, const LbfgsOptions& opt = {}) {
    const auto n = x.size();
    Vector g(n);
    double f = objective(x, g);

    std::deque<Vector> s_hist;
    std::deque<Vector> y_hist;
    std::deque<double> rho_hist;

    LbfgsResult res;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        const double gnorm = g.norm();
        if (gnorm <= opt.gradient_tolerance) {
            res.converged = true;
            break;
        }

        // two-loop recursion
        Vector q = g;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        double gamma = 1.0;
        if (!s_hist.empty()) {
            gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        } else {
            gamma = 1.0 / std::max(1.0, gnorm);
        }
        Vector dir = gamma * q;
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(dir);
            dir += s_hist[i] * (alpha[i] - beta);
        }
        dir = -dir;

        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            // not a descent direction; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g / std::max(1.0, gnorm);
            slope = g.dot(dir);
        }

        double step = 1.0;
        Vector x_new(n);
        Vector g_new(n);
        double f_new = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = objective(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // Armijo cannot be met at machine precision; accept any non-increasing step.
            if (std::isfinite(f_new) && f_new <= f && g_new.norm() < gnorm) {
                accepted = true;
            } else {
                break;
            }
        }

        Vector s = x_new - x;
        Vector y = g_new - g;
        const double sy = s.dot(y);
        x = std::move(x_new);
        g = std::move(g_new);
        f = f_new;
        if (sy > 1e-12 * y.squaredNorm() && sy > 0.0) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
    }
    res.x = std::move(x);
    res.value = f;
    res.gradient_norm = g.norm();
    res.iterations = it;
    res.converged = res.converged || res.gradient_norm <= opt.gradient_tolerance;
    return res;
}

} // namespace stabsteer

#endif
