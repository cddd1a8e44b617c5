#pragma once

// Forward simulation of traces under the gamma peak-height model, and the
// probability integral transform with a Kolmogorov-Smirnov uniformity test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixref/evidence.hpp"
#include "mixref/genotype_model.hpp"
#include "mixref/inference_engine.hpp"
#include "mixref/model_core.hpp"
#include "mixref/special_functions.hpp"

namespace mixref {

struct SimulationConfig {
    std::string trace_id = "T1";
    TraceParameters params;                    // phi follows `contributors`
    std::vector<GenotypeProfile> contributors;
    double threshold = 50.0;
    std::vector<std::string> markers;          // empty: every marker of the table
    std::uint64_t seed = 1;
};

/// Gamma draw allowing shape 0 (a point mass at 0).
inline double draw_gamma(std::mt19937_64& rng, double shape, double scale) {
    if (shape <= 0.0) return 0.0;
    return std::gamma_distribution<double>(shape, scale)(rng);
}

/// Genotypes drawn under Hardy-Weinberg equilibrium for every marker of `freqs`.
inline std::vector<GenotypeProfile> draw_profiles(const FrequencyTable& freqs, std::size_t count,
                                                  std::mt19937_64& rng, const std::string& prefix = "P") {
    std::vector<GenotypeProfile> out;
    for (std::size_t i = 0; i < count; ++i) {
        GenotypeProfile p{prefix + std::to_string(i + 1), {}};
        for (const auto& m : freqs.markers()) {
            std::discrete_distribution<std::size_t> pick(m.freqs.begin(), m.freqs.end());
            const auto a = pick(rng);
            const auto b = pick(rng);
            p.markers[m.marker] = {m.alleles[a], m.alleles[b]};
        }
        out.push_back(std::move(p));
    }
    return out;
}

/// One trace: per contributor and allele an unstuttered part
/// Gamma(rho (1 - xi) phi n, eta) stays at the allele and a stutter part
/// Gamma(rho xi phi n, eta) moves one repeat down (lost when that allele is
/// not on the ladder). Every non-silent ladder allele is listed; heights
/// below the threshold are reported as 0.
inline Trace simulate_trace(const FrequencyTable& freqs, const SimulationConfig& config) {
    const auto& p = config.params;
    if (!(p.rho > 0.0 && p.eta > 0.0 && p.xi >= 0.0 && p.xi < 1.0)) {
        throw std::invalid_argument("simulate_trace: invalid parameters");
    }
    if (p.phi.size() != config.contributors.size()) {
        throw std::invalid_argument("simulate_trace: phi needs one entry per contributor");
    }
    if (!(config.threshold > 0.0)) throw std::invalid_argument("simulate_trace: threshold must be positive");
    std::mt19937_64 rng(config.seed);
    std::vector<std::string> markers = config.markers;
    if (markers.empty()) {
        for (const auto& m : freqs.markers()) markers.push_back(m.marker);
    }
    Trace trace{config.trace_id, config.threshold, {}};
    for (const auto& name : markers) {
        const auto& m = freqs.at(name);
        const std::size_t na = m.size();
        std::vector<double> kept(na, 0.0);
        std::vector<double> stutter(na, 0.0);
        for (std::size_t i = 0; i < config.contributors.size(); ++i) {
            const auto* g = config.contributors[i].genotype(name);
            if (!g) throw std::invalid_argument("simulate_trace: " + config.contributors[i].id + " not typed on " + name);
            const auto counts = allele_counts(*g, m);
            for (std::size_t a = 0; a < na; ++a) {
                const double w = p.phi[i] * counts[a];
                kept[a] += draw_gamma(rng, p.rho * (1.0 - p.xi) * w, p.eta);
                stutter[a] += draw_gamma(rng, p.rho * p.xi * w, p.eta);
            }
        }
        auto& peaks = trace.markers[name];
        for (std::size_t a = 0; a < na; ++a) {
            if (m.alleles[a].is_silent()) continue;
            double h = kept[a];
            if (const auto s = stutter_successor(m, m.alleles[a])) h += stutter[*s];
            peaks.push_back({m.alleles[a], h >= config.threshold ? h : 0.0});
        }
    }
    return trace;
}

struct PitValue {
    std::string trace;
    std::string marker;
    std::string allele;
    double height = 0.0;
    double pit = 0.0;
};

/// For every observed peak, P(H <= z | all other peaks) under the fitted
/// model. By default the target keeps its observed status, so the reference
/// distribution is truncated to [C, inf); with `truncated = false` the target
/// peak is removed from the conditioning set entirely.
inline std::vector<PitValue> probability_integral_transform(const Evidence& ev, const ModelParameters& params,
                                                            bool truncated = true) {
    validate_parameters(params, ev.unknown_flags());
    std::vector<PitValue> out;
    const std::size_t nt = ev.traces().size();
    for (std::size_t mi = 0; mi < ev.markers().size(); ++mi) {
        const auto& cm = ev.markers()[mi];
        MarkerChain chain(ev, mi, params);
        for (std::size_t j = 0; j < chain.positions(); ++j) {
            const std::size_t a = cm.chain[j];
            for (std::size_t t = 0; t < nt; ++t) {
                const auto& obs = cm.observations[t][a];
                if (!chain.trace_typed(t) || !obs.observed) continue;
                const auto tp = chain.trace_parameters(t);
                const double c = obs.threshold / tp.eta;
                const double z = obs.height / tp.eta;
                LogSum num;
                LogSum den;
                chain.for_each_transition(j + 1, [&](std::uint32_t code, std::uint32_t, std::uint32_t next_ncode,
                                                     double log_alpha, double log_prior, double log_beta) {
                    const std::uint32_t here = chain.ncode(code);
                    double other = 0.0;
                    for (std::size_t s = 0; s < nt && other != kNegInf; ++s) {
                        if (s != t) other += chain.trace_factor(s, j, here, next_ncode);
                    }
                    if (other == kNegInf || log_beta == kNegInf) return;
                    const double shape = tp.rho * chain.post_stutter(t, j, here, next_ncode);
                    const double w = log_alpha + log_prior + other + log_beta;
                    if (shape <= 0.0) {
                        // Point mass at zero: below any observed height, never above C.
                        if (!truncated) {
                            num.add(w);
                            den.add(w);
                        }
                        return;
                    }
                    const double log_qz = log_gamma_q(shape, z);
                    if (truncated) {
                        const double log_qc = log_gamma_q(shape, c);
                        if (log_qc == kNegInf) return;
                        den.add(w + log_qc);
                        if (log_qz < log_qc) num.add(w + log_qc + std::log1p(-std::exp(log_qz - log_qc)));
                    } else {
                        den.add(w);
                        num.add(w + log_gamma_p(shape, z));
                    }
                });
                const double d = den.value();
                if (d == kNegInf) {
                    throw std::domain_error("probability_integral_transform: peak " + cm.ladder.alleles[a].text() +
                                            " at " + cm.name + " has zero probability");
                }
                const double pit = std::clamp(std::exp(num.value() - d), 0.0, 1.0);
                out.push_back({ev.traces()[t].id, cm.name, cm.ladder.alleles[a].text(), obs.height, pit});
            }
        }
    }
    return out;
}

struct KsResult {
    std::size_t n = 0;
    double statistic = 0.0;
    double p_value = 1.0;
};

namespace detail {

/// P(D_n < d) for the one-sample two-sided Kolmogorov statistic, by the
/// matrix-power method of Marsaglia, Tsang and Wang, with their large-sample
/// shortcut once n d exceeds 200.
inline double kolmogorov_cdf(std::size_t n, double d) {
    if (d <= 0.0) return 0.0;
    if (d >= 1.0) return 1.0;
    const double nd = static_cast<double>(n);
    const int k = static_cast<int>(nd * d) + 1;
    if (k > 200) {
        // The matrix gets large; the asymptotic tail is accurate this far out.
        const double s = d * d * nd;
        return 1.0 - 2.0 * std::exp(-(2.000071 + 0.331 / std::sqrt(nd) + 1.409 / nd) * s);
    }
    const int m = 2 * k - 1;
    const double h = k - nd * d;
    std::vector<double> H(m * m), Q(m * m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) H[i * m + j] = i - j + 1 < 0 ? 0.0 : 1.0;
    }
    for (int i = 0; i < m; ++i) {
        H[i * m] -= std::pow(h, i + 1);
        H[(m - 1) * m + i] -= std::pow(h, m - i);
    }
    H[(m - 1) * m] += 2.0 * h - 1.0 > 0.0 ? std::pow(2.0 * h - 1.0, m) : 0.0;
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i - j + 1 > 0) {
                for (int g = 1; g <= i - j + 1; ++g) H[i * m + j] /= g;
            }
        }
    }
    // Matrix power with a running power-of-ten exponent to avoid overflow.
    auto mul = [m](const std::vector<double>& a, const std::vector<double>& b) {
        std::vector<double> c(m * m, 0.0);
        for (int i = 0; i < m; ++i) {
            for (int l = 0; l < m; ++l) {
                const double x = a[i * m + l];
                if (x == 0.0) continue;
                for (int j = 0; j < m; ++j) c[i * m + j] += x * b[l * m + j];
            }
        }
        return c;
    };
    std::function<void(const std::vector<double>&, std::vector<double>&, int&, std::size_t)> power;
    power = [&](const std::vector<double>& a, std::vector<double>& v, int& ev, std::size_t p) {
        if (p == 1) {
            v = a;
            ev = 0;
            return;
        }
        power(a, v, ev, p / 2);
        v = mul(v, v);
        ev *= 2;
        if (p % 2 == 1) v = mul(a, v);
        const double centre = v[(k - 1) * m + (k - 1)];
        if (centre > 1e140) {
            for (auto& x : v) x *= 1e-140;
            ev += 140;
        }
    };
    int ev = 0;
    power(H, Q, ev, n);
    double r = Q[(k - 1) * m + (k - 1)];
    for (std::size_t i = 1; i <= n; ++i) {
        r = r * static_cast<double>(i) / nd;
        if (r < 1e-140) {
            r *= 1e140;
            ev -= 140;
        }
    }
    return r * std::pow(10.0, ev);
}

}  // namespace detail

/// Two-sided one-sample Kolmogorov-Smirnov test against Uniform(0, 1).
inline KsResult ks_uniform(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("ks_uniform: no values");
    std::sort(values.begin(), values.end());
    KsResult r;
    r.n = values.size();
    const double n = static_cast<double>(r.n);
    for (std::size_t i = 0; i < r.n; ++i) {
        const double u = std::clamp(values[i], 0.0, 1.0);
        r.statistic = std::max({r.statistic, (i + 1) / n - u, u - i / n});
    }
    r.p_value = std::clamp(1.0 - detail::kolmogorov_cdf(r.n, r.statistic), 0.0, 1.0);
    return r;
}

}  // namespace mixref
