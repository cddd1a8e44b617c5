#pragma once

// Peak-height model: gamma factors, stutter-adjusted effective counts,
// dropout curves and the (mu, sigma) <-> (rho, eta) reparametrization.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixref/special_functions.hpp"

namespace mixref {

/// Parameters of a single trace. eta and xi are usually shared across traces;
/// sharing is imposed by the fitting layer, not by this struct.
struct TraceParameters {
    double rho = 1.0;
    double eta = 1.0;
    double xi = 0.0;
    std::vector<double> phi;  // one entry per contributor present in the trace

    double mu() const { return rho * eta; }
    double sigma() const { return 1.0 / std::sqrt(rho); }
};

/// Per-marker replacements of rho (one value per trace) and/or xi.
struct MarkerOverride {
    std::optional<std::vector<double>> rho;
    std::optional<double> xi;
};

struct ModelParameters {
    std::vector<TraceParameters> traces;
    std::map<std::string, MarkerOverride> marker_overrides;
};

struct PeakObservation {
    double height = 0.0;
    double threshold = 50.0;
    bool observed = false;

    static PeakObservation make(double height, double threshold) {
        const bool seen = height >= threshold;
        return {seen ? height : 0.0, threshold, seen};
    }
};

struct RhoEta {
    double rho;
    double eta;
};

struct MeanCv {
    double mu;
    double sigma;
};

/// B_a = sum_i phi_i n_ia.
inline double effective_allele_count(std::span<const double> phi, std::span<const int> counts) {
    if (phi.size() != counts.size()) {
        throw std::invalid_argument("effective_allele_count: phi has " + std::to_string(phi.size()) +
                                    " entries but counts has " + std::to_string(counts.size()));
    }
    double b = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) b += phi[i] * counts[i];
    return b;
}

/// D_a = (1 - xi) B_a + xi B_{a+1}; B_successor is 0 when a+1 is not in the ladder.
inline double post_stutter_count(double xi, double b_here, double b_successor) {
    return (1.0 - xi) * b_here + xi * b_successor;
}

/// Log of the likelihood factor for one allele of one trace given its
/// post-stutter count D: the gamma density for an observed peak and the
/// probability of falling below threshold otherwise.
inline double peak_log_factor(const PeakObservation& obs, double rho, double eta, double d) {
    if (obs.observed && obs.height < obs.threshold) {
        throw std::invalid_argument("peak_log_factor: observed height " + std::to_string(obs.height) +
                                    " is below threshold " + std::to_string(obs.threshold));
    }
    const double shape = rho * d;
    if (shape <= 0.0) return obs.observed ? kNegInf : 0.0;
    if (obs.observed) return gamma_log_density(obs.height, shape, eta);
    return log_gamma_p(shape, obs.threshold / eta);
}

/// Probability that a single allele at mean height mu falls below C.
inline double dropout_probability_gamma(double mu, double eta, double threshold) {
    if (!(mu > 0.0 && eta > 0.0 && threshold > 0.0)) {
        throw std::invalid_argument("dropout_probability_gamma: arguments must be positive");
    }
    return gamma_p(mu / eta, threshold / eta);
}

/// Logistic dropout curve alpha h^beta / (1 + alpha h^beta).
inline double dropout_probability_logistic(double alpha, double beta, double hbar) {
    if (!(hbar > 0.0)) throw std::invalid_argument("dropout_probability_logistic: hbar must be positive");
    const double odds = alpha * std::pow(hbar, beta);
    return odds / (1.0 + odds);
}

/// Homozygous dropout implied by the logistic model for single-allele dropout d.
inline double homozygous_dropout_logistic(double d, double beta) {
    if (d < 0.0 || d > 1.0) throw std::invalid_argument("homozygous_dropout_logistic: d must be in [0,1]");
    const double f = std::exp2(beta);
    return f * d / (1.0 + (f - 1.0) * d);
}

inline RhoEta params_from_mean_cv(double mu, double sigma) {
    if (!(mu > 0.0 && sigma > 0.0)) throw std::invalid_argument("params_from_mean_cv: mu and sigma must be positive");
    const double s2 = sigma * sigma;
    return {1.0 / s2, mu * s2};
}

inline MeanCv mean_cv_from_params(double rho, double eta) {
    if (!(rho > 0.0 && eta > 0.0)) throw std::invalid_argument("mean_cv_from_params: rho and eta must be positive");
    return {rho * eta, 1.0 / std::sqrt(rho)};
}

/// Checks the ModelParameters invariants for the given contributor layout.
/// unknown_flags[t][k] tells whether phi[t][k] belongs to an unknown contributor.
inline void validate_parameters(const ModelParameters& params,
                                const std::vector<std::vector<bool>>& unknown_flags) {
    if (params.traces.size() != unknown_flags.size()) {
        throw std::invalid_argument("parameters cover " + std::to_string(params.traces.size()) +
                                    " traces, evidence has " + std::to_string(unknown_flags.size()));
    }
    for (std::size_t t = 0; t < params.traces.size(); ++t) {
        const auto& tp = params.traces[t];
        if (!(tp.rho > 0.0) || !(tp.eta > 0.0)) throw std::invalid_argument("rho and eta must be positive");
        if (!(tp.xi >= 0.0 && tp.xi < 1.0)) throw std::invalid_argument("xi must lie in [0, 1)");
        if (tp.phi.size() != unknown_flags[t].size()) {
            throw std::invalid_argument("trace " + std::to_string(t) + ": phi has " + std::to_string(tp.phi.size()) +
                                        " entries, expected " + std::to_string(unknown_flags[t].size()));
        }
        double total = 0.0;
        double last_unknown = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < tp.phi.size(); ++k) {
            if (tp.phi[k] < 0.0) throw std::invalid_argument("phi entries must be nonnegative");
            total += tp.phi[k];
            if (unknown_flags[t][k]) {
                if (tp.phi[k] > last_unknown + 1e-12) {
                    throw std::invalid_argument("phi of unknown contributors must be non-increasing");
                }
                last_unknown = tp.phi[k];
            }
        }
        if (std::fabs(total - 1.0) > 1e-12 && !tp.phi.empty()) {
            throw std::invalid_argument("phi must sum to 1 (got " + std::to_string(total) + ")");
        }
    }
}

}  // namespace mixref
