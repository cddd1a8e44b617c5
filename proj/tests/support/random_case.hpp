#pragma once

// Random small mixture instances shared by the unit and acceptance suites.

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mixref/evidence.hpp"
#include "mixref/genotype_model.hpp"
#include "mixref/model_core.hpp"

namespace mixref::testing {

struct RandomCase {
    FrequencyTable freqs;
    std::vector<Trace> traces;
    std::map<std::string, GenotypeProfile> profiles;
    Hypothesis hypothesis;
    ModelParameters params;
};

struct RandomCaseOptions {
    int min_alleles = 3;
    int max_alleles = 5;
    int max_unknowns = 2;
    int max_knowns = 2;
    int max_traces = 2;
    int markers = 1;
    bool allow_silent = true;
    bool allow_partial = true;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Ladder of consecutive repeats, optionally with one partial-repeat allele,
/// and Dirichlet(1) frequencies.
inline MarkerFrequencies random_ladder(std::mt19937_64& rng, const std::string& name, int alleles, bool partial) {
    MarkerFrequencies m{name, {}, {}};
    const int start = uniform_int(rng, 6, 20);
    const bool with_partial = partial && alleles >= 3 && uniform(rng, 0, 1) < 0.3;
    const int whole = with_partial ? alleles - 1 : alleles;
    for (int i = 0; i < whole; ++i) m.alleles.push_back(AlleleLabel::parse(std::to_string(start + i)));
    if (with_partial) m.alleles.push_back(AlleleLabel::parse(std::to_string(start + uniform_int(rng, 0, whole - 1)) + ".3"));
    double total = 0.0;
    for (int i = 0; i < alleles; ++i) {
        m.freqs.push_back(std::exponential_distribution<double>(1.0)(rng) + 1e-3);
        total += m.freqs.back();
    }
    for (auto& q : m.freqs) q /= total;
    return m;
}

inline Genotype random_genotype(std::mt19937_64& rng, const MarkerFrequencies& m) {
    std::discrete_distribution<std::size_t> pick(m.freqs.begin(), m.freqs.end());
    return {m.alleles[pick(rng)], m.alleles[pick(rng)]};
}

/// phi on the simplex with the unknown entries non-increasing.
inline std::vector<double> random_phi(std::mt19937_64& rng, const std::vector<bool>& unknown) {
    std::vector<double> phi;
    double total = 0.0;
    for (std::size_t i = 0; i < unknown.size(); ++i) {
        phi.push_back(std::exponential_distribution<double>(1.0)(rng) + 0.02);
        total += phi.back();
    }
    for (auto& p : phi) p /= total;
    std::vector<double> u;
    for (std::size_t i = 0; i < unknown.size(); ++i) {
        if (unknown[i]) u.push_back(phi[i]);
    }
    std::sort(u.rbegin(), u.rend());
    std::size_t k = 0;
    for (std::size_t i = 0; i < unknown.size(); ++i) {
        if (unknown[i]) phi[i] = u[k++];
    }
    return phi;
}

inline RandomCase random_case(std::mt19937_64& rng, const RandomCaseOptions& opt = {}) {
    RandomCase rc;
    std::vector<MarkerFrequencies> ladders;
    for (int m = 0; m < opt.markers; ++m) {
        ladders.push_back(random_ladder(rng, "M" + std::to_string(m + 1),
                                        uniform_int(rng, opt.min_alleles, opt.max_alleles), opt.allow_partial));
    }
    rc.freqs = FrequencyTable(ladders);
    if (opt.allow_silent && uniform(rng, 0, 1) < 0.25) rc.freqs = with_silent(rc.freqs, uniform(rng, 0.01, 0.1));

    const int unknowns = uniform_int(rng, 0, opt.max_unknowns);
    const int knowns = uniform_int(rng, unknowns == 0 ? 1 : 0, opt.max_knowns);
    std::vector<std::string> known;
    for (int k = 0; k < knowns; ++k) {
        GenotypeProfile p{"K" + std::to_string(k + 1), {}};
        for (const auto& m : rc.freqs.markers()) p.markers[m.marker] = random_genotype(rng, m);
        known.push_back(p.id);
        rc.profiles[p.id] = p;
    }
    rc.hypothesis = make_hypothesis("H", known, unknowns);

    const int traces = uniform_int(rng, 1, opt.max_traces);
    const std::vector<std::string> roles = [&] {
        std::vector<std::string> r = rc.hypothesis.known;
        r.insert(r.end(), rc.hypothesis.unknown.begin(), rc.hypothesis.unknown.end());
        return r;
    }();
    for (int t = 0; t < traces; ++t) {
        Trace tr;
        tr.id = "T" + std::to_string(t + 1);
        tr.threshold = uniform(rng, 20.0, 80.0);
        for (const auto& m : rc.freqs.markers()) {
            auto& peaks = tr.markers[m.marker];
            for (const auto& a : m.alleles) {
                if (a.is_silent()) continue;
                if (uniform(rng, 0, 1) < 0.5) peaks.push_back({a, tr.threshold + uniform(rng, 0.0, 1500.0)});
            }
        }
        // A second trace sometimes omits one contributor.
        if (t > 0 && roles.size() > 1 && uniform(rng, 0, 1) < 0.5) {
            auto subset = roles;
            subset.erase(subset.begin() + uniform_int(rng, 0, static_cast<int>(roles.size()) - 1));
            rc.hypothesis.trace_roles[tr.id] = subset;
        }
        rc.traces.push_back(std::move(tr));
    }

    for (int t = 0; t < traces; ++t) {
        std::vector<bool> unknown_flags;
        auto it = rc.hypothesis.trace_roles.find(rc.traces[t].id);
        const auto& members = it == rc.hypothesis.trace_roles.end() ? roles : it->second;
        for (const auto& r : roles) {
            if (std::find(members.begin(), members.end(), r) == members.end()) continue;
            unknown_flags.push_back(std::find(known.begin(), known.end(), r) == known.end());
        }
        TraceParameters tp;
        tp.rho = uniform(rng, 2.0, 40.0);
        tp.eta = uniform(rng, 5.0, 60.0);
        tp.xi = uniform(rng, 0.0, 0.2);
        tp.phi = random_phi(rng, unknown_flags);
        rc.params.traces.push_back(tp);
    }
    return rc;
}

inline Evidence make_evidence(const RandomCase& rc) {
    return Evidence(rc.freqs, rc.traces, rc.profiles, rc.hypothesis);
}

}  // namespace mixref::testing
