#pragma once

// Gamma-distribution special functions evaluated in log space.
//
// The regularized lower incomplete gamma P(a, x) uses the power series for
// x < a + 1 and the Lentz continued fraction for Q(a, x) otherwise. Both
// branches return log values so that tail probabilities far below the double
// range (e.g. P ~ 1e-400) still produce finite log-likelihood terms.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mixref {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

inline constexpr int kMaxSeriesTerms = 10000;
inline constexpr double kSeriesEps = 1e-17;

// log of sum_{n>=0} x^n / ((a+1)...(a+n))
inline double log_lower_series(double a, double x) {
    double term = 1.0;
    double sum = 1.0;
    double ap = a;
    for (int n = 0; n < kMaxSeriesTerms; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (term < sum * kSeriesEps) break;
    }
    return std::log(sum);
}

// Continued fraction for Q(a, x) * Gamma(a) * e^x * x^-a (modified Lentz).
inline double log_upper_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxSeriesTerms; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < kSeriesEps) break;
    }
    return std::log(h);
}

}  // namespace detail

/// log P(a, x), the regularized lower incomplete gamma function, for a > 0.
inline double log_gamma_p(double a, double x) {
    if (!(a > 0.0)) throw std::domain_error("log_gamma_p: shape must be positive");
    if (x <= 0.0) return kNegInf;
    if (std::isinf(x)) return 0.0;
    if (x < a + 1.0) {
        return -x + a * std::log(x) - std::lgamma(a + 1.0) + detail::log_lower_series(a, x);
    }
    const double log_q = -x + a * std::log(x) - std::lgamma(a) + detail::log_upper_fraction(a, x);
    return std::log1p(-std::exp(log_q));
}

/// log Q(a, x) = log(1 - P(a, x)).
inline double log_gamma_q(double a, double x) {
    if (!(a > 0.0)) throw std::domain_error("log_gamma_q: shape must be positive");
    if (x <= 0.0) return 0.0;
    if (std::isinf(x)) return kNegInf;
    if (x < a + 1.0) {
        const double log_p =
            -x + a * std::log(x) - std::lgamma(a + 1.0) + detail::log_lower_series(a, x);
        return std::log1p(-std::exp(log_p));
    }
    return -x + a * std::log(x) - std::lgamma(a) + detail::log_upper_fraction(a, x);
}

inline double gamma_p(double a, double x) { return std::exp(log_gamma_p(a, x)); }

/// Gamma(shape, scale) log density at h > 0.
inline double gamma_log_density(double h, double shape, double scale) {
    if (!(h > 0.0)) return kNegInf;
    return (shape - 1.0) * std::log(h) - h / scale - std::lgamma(shape) - shape * std::log(scale);
}

/// Gamma(shape, scale) CDF in log space; shape 0 is the point mass at zero.
inline double gamma_log_cdf(double h, double shape, double scale) {
    if (shape == 0.0) return h >= 0.0 ? 0.0 : kNegInf;
    return log_gamma_p(shape, h / scale);
}

inline double gamma_cdf(double h, double shape, double scale) {
    return std::exp(gamma_log_cdf(h, shape, scale));
}

/// Numerically stable log(exp(a) + exp(b)).
inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

/// Streaming log-sum-exp with a running maximum.
class LogSum {
  public:
    void add(double x) {
        if (x == kNegInf) return;
        if (x <= max_) {
            sum_ += std::exp(x - max_);
        } else {
            sum_ = sum_ * std::exp(max_ - x) + 1.0;
            max_ = x;
        }
    }
    double value() const { return max_ == kNegInf ? kNegInf : max_ + std::log(sum_); }

  private:
    double max_ = kNegInf;
    double sum_ = 0.0;
};

}  // namespace mixref
