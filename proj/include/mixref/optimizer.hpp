#pragma once

// Thin wrapper around the GSL Nelder-Mead simplex minimizer with restarts.

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

namespace mixref {

struct MinimizeSettings {
    double tolerance = 1e-8;       // relative change of the objective between restarts
    double simplex_size = 1e-7;    // characteristic simplex size ending one run
    double initial_step = 0.5;
    int max_iterations = 20000;    // across all restarts
    int max_restarts = 50;
};

struct MinimizeResult {
    std::vector<double> x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

namespace detail {

struct ObjectiveAdapter {
    const std::function<double(const std::vector<double>&)>* fn;
    std::vector<double> buffer;
    int evaluations = 0;
};

inline double gsl_objective(const gsl_vector* v, void* data) {
    auto* a = static_cast<ObjectiveAdapter*>(data);
    for (std::size_t i = 0; i < a->buffer.size(); ++i) a->buffer[i] = gsl_vector_get(v, i);
    ++a->evaluations;
    const double f = (*a->fn)(a->buffer);
    return std::isfinite(f) ? f : std::numeric_limits<double>::max() / 4;
}

struct GslVectorDeleter {
    void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
struct GslMinimizerDeleter {
    void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};

}  // namespace detail

/// Minimizes fn from x0. Each run stops when the simplex collapses; the
/// search restarts from the best vertex until a restart improves the value
/// by less than `tolerance` relative.
inline MinimizeResult minimize_nelder_mead(const std::function<double(const std::vector<double>&)>& fn,
                                           std::vector<double> x0, const MinimizeSettings& s = {}) {
    MinimizeResult result;
    result.x = x0;
    if (x0.empty()) {
        result.value = fn(x0);
        result.evaluations = 1;
        result.converged = true;
        return result;
    }
    gsl_set_error_handler_off();
    const std::size_t n = x0.size();
    detail::ObjectiveAdapter adapter{&fn, std::vector<double>(n), 0};
    gsl_multimin_function f{&detail::gsl_objective, n, &adapter};
    std::unique_ptr<gsl_vector, detail::GslVectorDeleter> x(gsl_vector_alloc(n));
    std::unique_ptr<gsl_vector, detail::GslVectorDeleter> step(gsl_vector_alloc(n));
    std::unique_ptr<gsl_multimin_fminimizer, detail::GslMinimizerDeleter> m(
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n));

    double previous = std::numeric_limits<double>::infinity();
    double step_size = s.initial_step;
    for (int restart = 0; restart <= s.max_restarts && result.iterations < s.max_iterations; ++restart) {
        for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x.get(), i, result.x[i]);
        gsl_vector_set_all(step.get(), step_size);
        if (gsl_multimin_fminimizer_set(m.get(), &f, x.get(), step.get()) != GSL_SUCCESS) {
            throw std::runtime_error("optimizer: could not initialize simplex");
        }
        bool collapsed = false;
        while (result.iterations < s.max_iterations) {
            ++result.iterations;
            if (gsl_multimin_fminimizer_iterate(m.get()) != GSL_SUCCESS) break;
            if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(m.get()), s.simplex_size) == GSL_SUCCESS) {
                collapsed = true;
                break;
            }
        }
        const double value = gsl_multimin_fminimizer_minimum(m.get());
        if (value <= result.value) {
            result.value = value;
            const gsl_vector* best = gsl_multimin_fminimizer_x(m.get());
            for (std::size_t i = 0; i < n; ++i) result.x[i] = gsl_vector_get(best, i);
        }
        const double scale = std::max(1.0, std::fabs(result.value));
        if (collapsed && std::isfinite(previous) && previous - result.value <= s.tolerance * scale) {
            result.converged = true;
            break;
        }
        previous = result.value;
        step_size = std::max(0.05, step_size * 0.5);
    }
    result.evaluations = adapter.evaluations;
    return result;
}

}  // namespace mixref
