#pragma once

// Case-level summaries built on the marker chains: per-peak artefact
// probabilities and ranked deconvolutions across markers.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mixref/evidence.hpp"
#include "mixref/inference_engine.hpp"

namespace mixref {

/// One ladder allele in one trace. An observed peak carries the probability
/// that no contributor has the allele (so the peak is stutter alone); an
/// allele without a peak carries the probability that it is present and has
/// dropped out.
struct ArtefactRow {
    std::string trace;
    std::string marker;
    std::string allele;
    double height = 0.0;
    std::optional<double> stutter;
    std::optional<double> dropout;
};

/// Presence is taken over all contributors of the hypothesis.
inline std::vector<ArtefactRow> artefact_rows(const Evidence& ev, const ModelParameters& params) {
    std::vector<ArtefactRow> rows;
    for (std::size_t mi = 0; mi < ev.markers().size(); ++mi) {
        const auto& cm = ev.markers()[mi];
        const auto presence = presence_posteriors(ev, mi, params);
        for (std::size_t t = 0; t < ev.traces().size(); ++t) {
            if (!cm.trace_typed[t]) continue;
            for (std::size_t a = 0; a < cm.ladder.size(); ++a) {
                if (cm.ladder.alleles[a].is_silent()) continue;
                const auto& obs = cm.observations[t][a];
                ArtefactRow r{ev.traces()[t].id, cm.name, cm.ladder.alleles[a].text(), obs.height, {}, {}};
                if (obs.observed) r.stutter = 1.0 - presence[a];
                else r.dropout = presence[a];
                rows.push_back(std::move(r));
            }
        }
    }
    return rows;
}

struct Deconvolution {
    std::vector<std::string> markers;
    std::vector<std::string> unknowns;
    /// genotypes[rank][marker][unknown]
    std::vector<std::vector<std::vector<Genotype>>> genotypes;
    std::vector<double> probabilities;
};

/// The k most probable joint genotype profiles of the unknown contributors.
/// With no unknowns there is one empty profile of probability 1.
inline Deconvolution deconvolve(const Evidence& ev, const ModelParameters& params, std::size_t k) {
    if (k == 0) throw std::invalid_argument("deconvolve: k must be at least 1");
    Deconvolution d;
    d.unknowns = ev.hypothesis().unknown;
    std::vector<std::vector<GenotypeCombination>> ranked;
    std::vector<std::vector<double>> probs;
    for (std::size_t mi = 0; mi < ev.markers().size(); ++mi) {
        d.markers.push_back(ev.markers()[mi].name);
        ranked.push_back(top_k_marker_genotypes(ev, mi, params, k));
        if (ranked.back().empty()) {
            throw std::domain_error("marker " + d.markers.back() + ": evidence has zero probability under the hypothesis");
        }
        std::vector<double> p;
        for (const auto& c : ranked.back()) p.push_back(c.probability);
        probs.push_back(std::move(p));
    }
    for (const auto& jp : top_k_joint_profiles(probs, k)) {
        std::vector<std::vector<Genotype>> g;
        for (std::size_t m = 0; m < ranked.size(); ++m) g.push_back(ranked[m][jp.choice[m]].genotypes);
        d.genotypes.push_back(std::move(g));
        d.probabilities.push_back(jp.probability);
    }
    return d;
}

}  // namespace mixref
