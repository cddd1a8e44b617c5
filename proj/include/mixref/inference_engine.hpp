#pragma once

// Exact marginalization over unknown contributors' genotypes.
//
// Each unknown contributor's genotype at a marker is a chain over allele
// positions with state (S, n): the running allele total and the count of the
// current allele. With U unknowns the joint chain has 6^U states. The peak
// factor for the allele at position j needs the counts at j and at its
// stutter donor, which chain_order() places at j + 1, so it is applied on the
// transition j -> j + 1 (and on a terminal transition for the last position).

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mixref/evidence.hpp"
#include "mixref/genotype_model.hpp"
#include "mixref/model_core.hpp"
#include "mixref/special_functions.hpp"

namespace mixref {

inline constexpr std::size_t kMaxUnknowns = 5;

/// Evidence together with one parameter value.
struct EvidenceBundle {
    std::shared_ptr<const Evidence> evidence;
    ModelParameters params;
};

/// Worker count for per-marker parallelism, capped by MIXREF_THREADS.
inline unsigned thread_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MIXREF_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
    }
    return n;
}

/// Unknown-contributor genotypes at one marker, one per unknown, with their
/// posterior probability.
struct GenotypeCombination {
    std::vector<Genotype> genotypes;
    double probability = 0.0;
    double log_weight = kNegInf;  // log P(z, n | H)
};

struct MarkerChainPosterior {
    std::string marker;
    double log_likelihood = kNegInf;
    std::vector<AlleleLabel> alleles;                         // ladder order
    std::vector<double> presence;                             // P(Y_a = 1 | z)
    std::vector<std::vector<std::array<double, 3>>> counts;   // [unknown][allele] -> P(n = 0, 1, 2 | z)
    std::vector<GenotypeCombination> ranked;
};

namespace detail {

inline constexpr int kStateS[6] = {0, 1, 1, 2, 2, 2};
inline constexpr int kStateN[6] = {0, 0, 1, 0, 1, 2};

inline int state_index(int s, int n) {
    switch (s) {
        case 0: return 0;
        case 1: return n == 0 ? 1 : 2;
        default: return 3 + n;
    }
}

inline std::size_t ipow(std::size_t base, std::size_t exp) {
    std::size_t r = 1;
    while (exp--) r *= base;
    return r;
}

}  // namespace detail

/// Forward-backward machinery for one marker at fixed parameters.
class MarkerChain {
  public:
    struct Successor {
        std::uint32_t code;
        std::uint32_t ncode;
        double log_prior;
    };

    /// `presence` maps ladder indices to a required value of Y_a.
    MarkerChain(const Evidence& evidence, std::size_t marker, const ModelParameters& params,
                const std::map<std::size_t, bool>& presence = {})
        : ev_(evidence), cm_(evidence.markers().at(marker)), params_(params) {
        unknowns_ = evidence.unknown_count();
        if (unknowns_ > kMaxUnknowns) {
            throw std::invalid_argument("at most " + std::to_string(kMaxUnknowns) + " unknown contributors supported");
        }
        positions_ = cm_.chain.size();
        states_ = detail::ipow(6, unknowns_);
        ncodes_ = detail::ipow(3, unknowns_);
        setup_traces();
        setup_priors();
        setup_masks(presence);
        cache_.assign(positions_, std::vector<double>());
    }

    std::size_t positions() const { return positions_; }
    std::size_t unknowns() const { return unknowns_; }
    std::size_t states() const { return states_; }
    const CompiledMarker& marker() const { return cm_; }

    double log_likelihood() {
        forward();
        return log_likelihood_;
    }

    /// Count of unknown u for the allele at the state's chain position.
    int count(std::uint32_t code, std::size_t u) const {
        return detail::kStateN[(code / detail::ipow(6, u)) % 6];
    }
    std::uint32_t ncode(std::uint32_t code) const {
        std::uint32_t nc = 0;
        std::uint32_t mul = 1;
        for (std::size_t u = 0; u < unknowns_; ++u) {
            nc += mul * detail::kStateN[code % 6];
            code /= 6;
            mul *= 3;
        }
        return nc;
    }

    /// Sum over traces of peak log factors for the allele at chain position j,
    /// given the unknowns' counts there (ncode_here) and at position j + 1.
    double evidence_factor(std::size_t j, std::uint32_t ncode_here, std::uint32_t ncode_next) {
        const bool uses_next = cm_.successor_next[j];
        auto& cache = cache_[j];
        if (cache.empty()) cache.assign(ncodes_ * (uses_next ? ncodes_ : 1), std::numeric_limits<double>::quiet_NaN());
        const std::size_t key = uses_next ? ncode_here * ncodes_ + ncode_next : ncode_here;
        double& slot = cache[key];
        if (std::isnan(slot)) {
            double total = 0.0;
            for (std::size_t t = 0; t < traces_.size() && total != kNegInf; ++t) {
                total += trace_factor(t, j, ncode_here, ncode_next);
            }
            slot = total;
        }
        return slot;
    }

    /// Post-stutter count D for trace t at chain position j.
    double post_stutter(std::size_t t, std::size_t j, std::uint32_t ncode_here, std::uint32_t ncode_next) const {
        const auto& tr = traces_[t];
        const std::size_t a = cm_.chain[j];
        double b_here = tr.b_known[a];
        double b_next = 0.0;
        const bool uses_next = cm_.successor_next[j];
        if (uses_next) b_next = tr.b_known[cm_.chain[j + 1]];
        for (std::size_t u = 0; u < unknowns_; ++u) {
            b_here += tr.weight[u] * (ncode_here % 3);
            ncode_here /= 3;
            if (uses_next) {
                b_next += tr.weight[u] * (ncode_next % 3);
                ncode_next /= 3;
            }
        }
        return post_stutter_count(tr.xi, b_here, b_next);
    }

    double trace_factor(std::size_t t, std::size_t j, std::uint32_t ncode_here, std::uint32_t ncode_next) const {
        const auto& tr = traces_[t];
        const std::size_t a = cm_.chain[j];
        if (!tr.typed || cm_.ladder.alleles[a].is_silent()) return 0.0;
        return peak_log_factor(cm_.observations[t][a], tr.rho, tr.eta, post_stutter(t, j, ncode_here, ncode_next));
    }

    const EffectiveParameters trace_parameters(std::size_t t) const {
        return {traces_[t].rho, traces_[t].eta, traces_[t].xi};
    }
    bool trace_typed(std::size_t t) const { return traces_[t].typed; }

    /// Successors of a joint state at position j - 1 into position j (j < positions).
    void successors(std::size_t j, std::uint32_t code, std::vector<Successor>& out) const {
        out.clear();
        out.push_back({0, 0, 0.0});
        std::uint32_t mul6 = 1;
        std::uint32_t mul3 = 1;
        for (std::size_t u = 0; u < unknowns_; ++u) {
            const int s = detail::kStateS[code % 6];
            code /= 6;
            const std::size_t base = out.size();
            std::vector<Successor> grown;
            grown.reserve(base * 3);
            for (int n = 0; n + s <= 2; ++n) {
                const double lp = log_prior_[j][s][n];
                if (lp == kNegInf) continue;
                const std::uint32_t st = detail::state_index(s + n, n);
                for (std::size_t i = 0; i < base; ++i) {
                    grown.push_back({out[i].code + st * mul6, out[i].ncode + static_cast<std::uint32_t>(n) * mul3,
                                     out[i].log_prior + lp});
                }
            }
            out.swap(grown);
            mul6 *= 6;
            mul3 *= 3;
        }
    }

    bool allowed(std::size_t j, std::uint32_t code) const {
        return masks_[j].empty() || masks_[j][code];
    }

    void forward() {
        if (forward_done_) return;
        alpha_.assign(positions_ + 1, std::vector<double>(states_, kNegInf));
        alpha_[0][0] = 0.0;
        std::vector<Successor> succ;
        for (std::size_t j = 0; j < positions_; ++j) {
            std::vector<LogSum> acc(states_);
            for (std::uint32_t code = 0; code < states_; ++code) {
                const double a = alpha_[j][code];
                if (a == kNegInf) continue;
                const std::uint32_t here = ncode(code);
                successors(j, code, succ);
                for (const auto& s : succ) {
                    if (!allowed(j, s.code)) continue;
                    const double e = j == 0 ? 0.0 : evidence_factor(j - 1, here, s.ncode);
                    acc[s.code].add(a + s.log_prior + e);
                }
            }
            for (std::uint32_t code = 0; code < states_; ++code) alpha_[j + 1][code] = acc[code].value();
        }
        LogSum total;
        for (std::uint32_t code = 0; code < states_; ++code) {
            const double a = alpha_[positions_][code];
            if (a == kNegInf) continue;
            total.add(a + evidence_factor(positions_ - 1, ncode(code), 0));
        }
        log_likelihood_ = total.value();
        forward_done_ = true;
    }

    /// beta_[j + 1][code]: log P(evidence from position j on | state at j).
    void backward() {
        forward();
        if (backward_done_) return;
        beta_.assign(positions_ + 1, std::vector<double>(states_, kNegInf));
        vbeta_.assign(positions_ + 1, std::vector<double>(states_, kNegInf));
        for (std::uint32_t code = 0; code < states_; ++code) {
            if (alpha_[positions_][code] == kNegInf) continue;
            beta_[positions_][code] = vbeta_[positions_][code] = evidence_factor(positions_ - 1, ncode(code), 0);
        }
        std::vector<Successor> succ;
        for (std::size_t j = positions_ - 1; j >= 1; --j) {
            for (std::uint32_t code = 0; code < states_; ++code) {
                if (alpha_[j][code] == kNegInf) continue;
                const std::uint32_t here = ncode(code);
                successors(j, code, succ);
                LogSum acc;
                double best = kNegInf;
                for (const auto& s : succ) {
                    if (!allowed(j, s.code)) continue;
                    const double w = s.log_prior + evidence_factor(j - 1, here, s.ncode);
                    acc.add(w + beta_[j + 1][s.code]);
                    best = std::max(best, w + vbeta_[j + 1][s.code]);
                }
                beta_[j][code] = acc.value();
                vbeta_[j][code] = best;
            }
        }
        backward_done_ = true;
    }

    /// log P(state at chain position j = code | z).
    double state_log_marginal(std::size_t j, std::uint32_t code) {
        backward();
        const double a = alpha_[j + 1][code];
        if (a == kNegInf || log_likelihood_ == kNegInf) return kNegInf;
        return a + beta_[j + 1][code] - log_likelihood_;
    }

    /// Visits every transition into chain position j (j == positions() is the
    /// terminal step) with log alpha of the source, the log prior of the step
    /// and log beta of the target, where the evidence factor of position j - 1
    /// is left to the caller. For the terminal step the target code is 0 and
    /// its beta is 0.
    template <typename Fn>
    void for_each_transition(std::size_t j, Fn&& fn) {
        backward();
        std::vector<Successor> succ;
        for (std::uint32_t code = 0; code < states_; ++code) {
            const double a = alpha_[j][code];
            if (a == kNegInf) continue;
            if (j == positions_) {
                fn(code, std::uint32_t{0}, std::uint32_t{0}, a, 0.0, 0.0);
                continue;
            }
            successors(j, code, succ);
            for (const auto& s : succ) {
                if (!allowed(j, s.code)) continue;
                fn(code, s.code, s.ncode, a, s.log_prior, beta_[j + 1][s.code]);
            }
        }
    }

    MarkerChainPosterior posterior() {
        backward();
        if (log_likelihood_ == kNegInf) {
            throw std::domain_error("marker " + cm_.name + ": evidence has zero probability under the hypothesis");
        }
        MarkerChainPosterior post;
        post.marker = cm_.name;
        post.log_likelihood = log_likelihood_;
        post.alleles = cm_.ladder.alleles;
        const std::size_t na = cm_.ladder.size();
        post.presence.assign(na, 0.0);
        post.counts.assign(unknowns_, std::vector<std::array<double, 3>>(na, {0.0, 0.0, 0.0}));
        for (std::size_t j = 0; j < positions_; ++j) {
            const std::size_t a = cm_.chain[j];
            double present = 0.0;
            for (std::uint32_t code = 0; code < states_; ++code) {
                const double lm = state_log_marginal(j, code);
                if (lm == kNegInf) continue;
                const double p = std::exp(lm);
                bool any = false;
                for (std::size_t u = 0; u < unknowns_; ++u) {
                    const int n = count(code, u);
                    post.counts[u][a][n] += p;
                    any = any || n > 0;
                }
                if (any) present += p;
            }
            post.presence[a] = known_present_[a] ? 1.0 : std::min(1.0, present);
        }
        return post;
    }

    /// Exact k most probable unknown-genotype combinations (A* over the chain
    /// with the max-product backward pass as an exact heuristic).
    std::vector<GenotypeCombination> top_k(std::size_t k) {
        if (k == 0) throw std::invalid_argument("top_k: k must be at least 1");
        backward();
        std::vector<GenotypeCombination> out;
        if (log_likelihood_ == kNegInf) return out;
        std::vector<SearchNode> nodes;
        using Entry = std::pair<double, int>;
        std::priority_queue<Entry> heap;
        std::vector<Successor> succ;
        successors(0, 0, succ);
        for (const auto& s : succ) {
            if (!allowed(0, s.code)) continue;
            const double pr = s.log_prior + vbeta_[1][s.code];
            if (pr == kNegInf) continue;
            nodes.push_back({s.log_prior, s.code, 0, -1});
            heap.push({pr, static_cast<int>(nodes.size()) - 1});
        }
        while (!heap.empty() && out.size() < k) {
            const auto [priority, idx] = heap.top();
            heap.pop();
            const SearchNode node = nodes[idx];
            if (node.j + 1 == positions_) {
                out.push_back(reconstruct(nodes, idx, priority));
                continue;
            }
            const std::uint32_t here = ncode(node.code);
            successors(node.j + 1, node.code, succ);
            for (const auto& s : succ) {
                if (!allowed(node.j + 1, s.code)) continue;
                const double score = node.score + s.log_prior + evidence_factor(node.j, here, s.ncode);
                const double pr = score + vbeta_[node.j + 2][s.code];
                if (pr == kNegInf) continue;
                nodes.push_back({score, s.code, node.j + 1, idx});
                heap.push({pr, static_cast<int>(nodes.size()) - 1});
            }
        }
        return out;
    }

    bool known_present(std::size_t ladder_index) const { return known_present_[ladder_index]; }

  private:
    struct SearchNode {
        double score;
        std::uint32_t code;
        std::uint32_t j;
        int parent;
    };

    struct TraceState {
        bool typed = false;
        double rho = 1.0;
        double eta = 1.0;
        double xi = 0.0;
        std::vector<double> b_known;  // per ladder index
        std::vector<double> weight;   // per unknown
    };

    void setup_traces() {
        const std::size_t na = cm_.ladder.size();
        const std::size_t nk = ev_.known_count();
        known_present_.assign(na, false);
        for (std::size_t k = 0; k < nk; ++k) {
            for (std::size_t a = 0; a < na; ++a) known_present_[a] = known_present_[a] || cm_.known_counts[k][a] > 0;
        }
        for (std::size_t t = 0; t < ev_.traces().size(); ++t) {
            TraceState ts;
            ts.typed = cm_.trace_typed[t];
            const auto eff = effective_parameters(params_, cm_.name, t);
            ts.rho = eff.rho;
            ts.eta = eff.eta;
            ts.xi = eff.xi;
            ts.b_known.assign(na, 0.0);
            ts.weight.assign(unknowns_, 0.0);
            const auto& members = ev_.members(t);
            const auto& phi = params_.traces.at(t).phi;
            for (std::size_t m = 0; m < members.size(); ++m) {
                const std::size_t c = members[m];
                if (c < nk) {
                    for (std::size_t a = 0; a < na; ++a) ts.b_known[a] += phi[m] * cm_.known_counts[c][a];
                } else {
                    ts.weight[c - nk] = phi[m];
                }
            }
            traces_.push_back(std::move(ts));
        }
    }

    void setup_priors() {
        log_prior_.assign(positions_, {});
        for (std::size_t j = 0; j < positions_; ++j) {
            for (int s = 0; s <= 2; ++s) {
                const auto dist = chain_conditional(cm_.chain_q, j, s);
                for (int n = 0; n <= 2; ++n) log_prior_[j][s][n] = dist[n] > 0.0 ? std::log(dist[n]) : kNegInf;
            }
        }
    }

    void setup_masks(const std::map<std::size_t, bool>& presence) {
        masks_.assign(positions_, {});
        for (const auto& [a, want] : presence) {
            if (a >= cm_.ladder.size()) throw std::out_of_range("presence constraint on unknown allele index");
            const std::size_t j = static_cast<std::size_t>(
                std::find(cm_.chain.begin(), cm_.chain.end(), a) - cm_.chain.begin());
            auto& mask = masks_[j];
            mask.assign(states_, true);
            for (std::uint32_t code = 0; code < states_; ++code) {
                bool any = known_present_[a];
                for (std::size_t u = 0; u < unknowns_; ++u) any = any || count(code, u) > 0;
                mask[code] = any == want;
            }
        }
    }

    GenotypeCombination reconstruct(const std::vector<SearchNode>& nodes, int idx, double log_weight) const {
        std::vector<std::vector<int>> counts(unknowns_, std::vector<int>(cm_.ladder.size(), 0));
        for (int i = idx; i >= 0; i = nodes[i].parent) {
            const std::size_t a = cm_.chain[nodes[i].j];
            for (std::size_t u = 0; u < unknowns_; ++u) counts[u][a] = count(nodes[i].code, u);
        }
        GenotypeCombination combo;
        for (std::size_t u = 0; u < unknowns_; ++u) combo.genotypes.push_back(genotype_from_counts(counts[u]));
        combo.log_weight = log_weight;
        combo.probability = std::exp(log_weight - log_likelihood_);
        return combo;
    }

    Genotype genotype_from_counts(const std::vector<int>& counts) const {
        std::vector<AlleleLabel> labels;
        for (std::size_t a = 0; a < counts.size(); ++a) {
            for (int c = 0; c < counts[a]; ++c) labels.push_back(cm_.ladder.alleles[a]);
        }
        if (labels.size() != 2) throw std::logic_error("reconstructed genotype does not have two alleles");
        return {labels[0], labels[1]};
    }

    const Evidence& ev_;
    const CompiledMarker& cm_;
    const ModelParameters& params_;
    std::size_t unknowns_ = 0;
    std::size_t positions_ = 0;
    std::size_t states_ = 1;
    std::size_t ncodes_ = 1;
    std::vector<TraceState> traces_;
    std::vector<std::array<std::array<double, 3>, 3>> log_prior_;
    std::vector<std::vector<bool>> masks_;
    std::vector<bool> known_present_;
    std::vector<std::vector<double>> cache_;
    std::vector<std::vector<double>> alpha_;
    std::vector<std::vector<double>> beta_;
    std::vector<std::vector<double>> vbeta_;
    double log_likelihood_ = kNegInf;
    bool forward_done_ = false;
    bool backward_done_ = false;
};

inline std::size_t require_marker(const Evidence& ev, const std::string& marker) {
    auto idx = ev.marker_index(marker);
    if (!idx) throw std::out_of_range("marker '" + marker + "' not in evidence");
    return *idx;
}

/// log P(z_m | H) for one marker.
inline double marker_log_likelihood(const Evidence& ev, std::size_t marker, const ModelParameters& params) {
    return MarkerChain(ev, marker, params).log_likelihood();
}

inline double marker_log_likelihood(const EvidenceBundle& b, const std::string& marker) {
    validate_parameters(b.params, b.evidence->unknown_flags());
    return marker_log_likelihood(*b.evidence, require_marker(*b.evidence, marker), b.params);
}

/// log P(z | H), summed over markers; markers may be evaluated concurrently.
/// `validate` = false skips the parameter invariants (used for finite
/// differences that may briefly break the ordering of unknown fractions).
inline double total_log_likelihood(const Evidence& ev, const ModelParameters& params, bool validate = true) {
    if (validate) validate_parameters(params, ev.unknown_flags());
    const std::size_t nm = ev.markers().size();
    std::vector<double> per_marker(nm, 0.0);
    const unsigned workers = std::min<unsigned>(thread_count(), static_cast<unsigned>(std::max<std::size_t>(nm, 1)));
    if (workers <= 1) {
        for (std::size_t m = 0; m < nm; ++m) per_marker[m] = marker_log_likelihood(ev, m, params);
    } else {
        std::vector<std::future<void>> jobs;
        for (unsigned w = 0; w < workers; ++w) {
            jobs.push_back(std::async(std::launch::async, [&, w] {
                for (std::size_t m = w; m < nm; m += workers) per_marker[m] = marker_log_likelihood(ev, m, params);
            }));
        }
        for (auto& j : jobs) j.get();
    }
    double total = 0.0;
    for (double v : per_marker) total += v;
    return total;
}

inline double total_log_likelihood(const EvidenceBundle& b) { return total_log_likelihood(*b.evidence, b.params); }

/// Every genotype of one individual at a marker, as allele-count vectors.
inline std::vector<std::vector<int>> all_genotype_counts(const MarkerFrequencies& m) {
    std::vector<std::vector<int>> out;
    for (std::size_t a = 0; a < m.size(); ++a) {
        for (std::size_t b = a; b < m.size(); ++b) {
            std::vector<int> c(m.size(), 0);
            ++c[a];
            ++c[b];
            out.push_back(std::move(c));
        }
    }
    return out;
}

/// Calls fn(counts per unknown, log P(z_m | n) + log P(n | H)) for every
/// combination of unknown genotypes, evaluating the model term by term.
inline void enumerate_genotype_combinations(
    const Evidence& ev, std::size_t marker, const ModelParameters& params,
    const std::function<void(const std::vector<std::vector<int>>&, double)>& fn,
    std::size_t budget = 1'000'000) {
    const auto& cm = ev.markers().at(marker);
    const auto& ladder = cm.ladder;
    const auto genotypes = all_genotype_counts(ladder);
    const std::size_t nu = ev.unknown_count();
    const std::size_t nk = ev.known_count();
    double combos = 1.0;
    for (std::size_t u = 0; u < nu; ++u) combos *= static_cast<double>(genotypes.size());
    if (combos > static_cast<double>(budget)) {
        throw std::length_error("brute force: " + std::to_string(static_cast<long long>(combos)) +
                                " genotype combinations exceed budget " + std::to_string(budget));
    }
    std::vector<double> log_priors;
    for (const auto& g : genotypes) log_priors.push_back(std::log(genotype_prior(g, ladder)));

    std::vector<std::size_t> pick(nu, 0);
    std::vector<std::vector<int>> counts(nu);
    while (true) {
        double lp = 0.0;
        for (std::size_t u = 0; u < nu; ++u) {
            counts[u] = genotypes[pick[u]];
            lp += log_priors[pick[u]];
        }
        double le = 0.0;
        for (std::size_t t = 0; t < ev.traces().size() && le != kNegInf; ++t) {
            if (!cm.trace_typed[t]) continue;
            const auto eff = effective_parameters(params, cm.name, t);
            const auto& members = ev.members(t);
            const auto& phi = params.traces.at(t).phi;
            std::vector<double> b(ladder.size(), 0.0);
            for (std::size_t a = 0; a < ladder.size(); ++a) {
                std::vector<int> n;
                for (auto c : members) n.push_back(c < nk ? cm.known_counts[c][a] : counts[c - nk][a]);
                b[a] = effective_allele_count(phi, n);
            }
            for (std::size_t a = 0; a < ladder.size(); ++a) {
                if (ladder.alleles[a].is_silent()) continue;
                const auto succ = stutter_successor(ladder, ladder.alleles[a]);
                const double d = post_stutter_count(eff.xi, b[a], succ ? b[*succ] : 0.0);
                le += peak_log_factor(cm.observations[t][a], eff.rho, eff.eta, d);
                if (le == kNegInf) break;
            }
        }
        fn(counts, lp + le);
        std::size_t u = 0;
        for (; u < nu; ++u) {
            if (++pick[u] < genotypes.size()) break;
            pick[u] = 0;
        }
        if (u == nu) break;
    }
}

/// Reference evaluation of the marker likelihood by exhaustive enumeration.
inline double brute_force_log_likelihood(const Evidence& ev, std::size_t marker, const ModelParameters& params,
                                         std::size_t budget = 1'000'000) {
    validate_parameters(params, ev.unknown_flags());
    LogSum total;
    enumerate_genotype_combinations(
        ev, marker, params, [&](const std::vector<std::vector<int>>&, double lw) { total.add(lw); }, budget);
    return total.value();
}

inline double brute_force_log_likelihood(const EvidenceBundle& b, const std::string& marker) {
    return brute_force_log_likelihood(*b.evidence, require_marker(*b.evidence, marker), b.params);
}

/// P(Y_a = 1 | z) for every allele of the marker (ladder order).
inline std::vector<double> presence_posteriors(const Evidence& ev, std::size_t marker, const ModelParameters& params) {
    validate_parameters(params, ev.unknown_flags());
    return MarkerChain(ev, marker, params).posterior().presence;
}

inline MarkerChainPosterior marker_posterior(const Evidence& ev, std::size_t marker, const ModelParameters& params) {
    validate_parameters(params, ev.unknown_flags());
    return MarkerChain(ev, marker, params).posterior();
}

/// Posterior quantities given pre-classified presence (true) or absence
/// (false) of alleles, keyed by allele label. The returned log-likelihood is
/// log P(z, Y = y | H).
inline MarkerChainPosterior conditioned_presence(const Evidence& ev, std::size_t marker,
                                                 const ModelParameters& params,
                                                 const std::map<std::string, bool>& assignments) {
    validate_parameters(params, ev.unknown_flags());
    const auto& ladder = ev.markers().at(marker).ladder;
    std::map<std::size_t, bool> presence;
    for (const auto& [label, value] : assignments) {
        auto idx = ladder.index_of(label);
        if (!idx) throw std::invalid_argument("allele " + label + " not in ladder of marker " + ladder.marker);
        presence[*idx] = value;
    }
    MarkerChain chain(ev, marker, params, presence);
    if (chain.log_likelihood() == kNegInf) {
        throw std::domain_error("marker " + ladder.marker + ": presence assignment has zero posterior probability");
    }
    return chain.posterior();
}

/// The k most probable genotype combinations of the unknowns at one marker.
/// Fewer are returned when the marker has fewer than k combinations.
inline std::vector<GenotypeCombination> top_k_marker_genotypes(const Evidence& ev, std::size_t marker,
                                                               const ModelParameters& params, std::size_t k) {
    validate_parameters(params, ev.unknown_flags());
    return MarkerChain(ev, marker, params).top_k(k);
}

struct JointProfile {
    std::vector<std::size_t> choice;  // index into each marker's ranked list
    double probability = 0.0;
};

/// Exact top-k of the product distribution over markers. Each inner list must
/// be sorted by non-increasing probability. Children of a lattice point are
/// formed by advancing a coordinate at or after its last advanced coordinate,
/// so every point has one parent and is generated once.
inline std::vector<JointProfile> top_k_joint_profiles(const std::vector<std::vector<double>>& marker_probs,
                                                      std::size_t k) {
    std::vector<JointProfile> out;
    const std::size_t nm = marker_probs.size();
    for (const auto& list : marker_probs) {
        if (list.empty()) throw std::invalid_argument("top_k_joint_profiles: empty marker list");
        for (std::size_t i = 1; i < list.size(); ++i) {
            if (list[i] > list[i - 1]) throw std::invalid_argument("top_k_joint_profiles: list not sorted");
        }
    }
    auto log_prob = [&](const std::vector<std::size_t>& c) {
        double lp = 0.0;
        for (std::size_t m = 0; m < nm; ++m) lp += std::log(marker_probs[m][c[m]]);
        return lp;
    };
    struct Item {
        double lp;
        std::vector<std::size_t> choice;
        std::size_t pivot;
        bool operator<(const Item& o) const { return lp < o.lp; }
    };
    std::priority_queue<Item> heap;
    std::vector<std::size_t> start(nm, 0);
    heap.push({log_prob(start), start, 0});
    while (!heap.empty() && out.size() < k) {
        Item it = heap.top();
        heap.pop();
        out.push_back({it.choice, std::exp(it.lp)});
        for (std::size_t m = it.pivot; m < nm; ++m) {
            if (it.choice[m] + 1 >= marker_probs[m].size()) continue;
            auto next = it.choice;
            ++next[m];
            heap.push({log_prob(next), std::move(next), m});
        }
    }
    return out;
}

}  // namespace mixref
