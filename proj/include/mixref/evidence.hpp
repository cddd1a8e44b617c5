#pragma once

// Observed traces, hypotheses and their compilation into per-marker
// structures consumed by the inference engine.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixref/genotype_model.hpp"
#include "mixref/model_core.hpp"

namespace mixref {

struct Peak {
    AlleleLabel allele;
    double height = 0.0;

    friend bool operator==(const Peak& a, const Peak& b) { return a.allele == b.allele && a.height == b.height; }
};

/// Peak heights of one electropherogram. A marker listed here is typed in the
/// trace; ladder alleles without a row are unobserved.
struct Trace {
    std::string id;
    double threshold = 50.0;
    std::map<std::string, std::vector<Peak>> markers;
};

/// Contributors under a hypothesis. Roles are known profile ids followed by
/// unknown labels. `trace_roles` restricts which roles contribute to a trace;
/// traces not listed receive every role, and an empty list leaves the trace
/// without contributors. Unknowns appearing in several traces
/// carry the same genotype in each of them.
struct Hypothesis {
    std::string id;
    std::vector<std::string> known;
    std::vector<std::string> unknown;
    std::map<std::string, std::vector<std::string>> trace_roles;

    std::size_t contributor_count() const { return known.size() + unknown.size(); }
};

inline Hypothesis make_hypothesis(std::string id, std::vector<std::string> known, int unknowns) {
    Hypothesis h{std::move(id), std::move(known), {}, {}};
    for (int u = 1; u <= unknowns; ++u) h.unknown.push_back("U" + std::to_string(u));
    return h;
}

class EvidenceError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Everything the chain needs for one marker.
struct CompiledMarker {
    std::string name;
    MarkerFrequencies ladder;
    std::vector<std::size_t> chain;         // ladder index at each chain position
    std::vector<double> chain_q;            // frequencies in chain order
    std::vector<bool> successor_next;       // chain[j+1] is the stutter donor into chain[j]
    std::vector<std::optional<std::size_t>> successor;  // ladder index -> donor ladder index
    std::vector<bool> trace_typed;          // per trace
    std::vector<std::vector<PeakObservation>> observations;  // [trace][ladder index]
    std::vector<std::vector<int>> known_counts;              // [known contributor][ladder index]
};

/// Data plus hypothesis, validated and laid out per marker. Immutable.
class Evidence {
  public:
    Evidence(const FrequencyTable& freqs, std::vector<Trace> traces,
             const std::map<std::string, GenotypeProfile>& profiles, Hypothesis hypothesis)
        : traces_(std::move(traces)), hypothesis_(std::move(hypothesis)) {
        build(freqs, profiles);
    }

    const Hypothesis& hypothesis() const { return hypothesis_; }
    const std::vector<Trace>& traces() const { return traces_; }
    const std::vector<CompiledMarker>& markers() const { return markers_; }
    const FrequencyTable& frequencies() const { return freqs_; }
    std::size_t known_count() const { return hypothesis_.known.size(); }
    std::size_t unknown_count() const { return hypothesis_.unknown.size(); }
    const std::vector<GenotypeProfile>& known_profiles() const { return known_profiles_; }

    /// Contributor indices (knowns first, then unknowns) present in trace t.
    const std::vector<std::size_t>& members(std::size_t t) const { return members_[t]; }
    std::string contributor_name(std::size_t c) const {
        return c < known_count() ? hypothesis_.known[c] : hypothesis_.unknown[c - known_count()];
    }
    bool is_unknown(std::size_t c) const { return c >= known_count(); }

    std::vector<std::vector<bool>> unknown_flags() const {
        std::vector<std::vector<bool>> flags;
        for (const auto& m : members_) {
            std::vector<bool> f;
            for (auto c : m) f.push_back(is_unknown(c));
            flags.push_back(std::move(f));
        }
        return flags;
    }

    std::optional<std::size_t> marker_index(const std::string& name) const {
        for (std::size_t i = 0; i < markers_.size(); ++i) {
            if (markers_[i].name == name) return i;
        }
        return std::nullopt;
    }

    std::vector<std::string> marker_names() const {
        std::vector<std::string> names;
        for (const auto& m : markers_) names.push_back(m.name);
        return names;
    }

    std::size_t observed_peak_count() const {
        std::size_t n = 0;
        for (const auto& m : markers_) {
            for (const auto& obs : m.observations) {
                for (const auto& o : obs) n += o.observed ? 1 : 0;
            }
        }
        return n;
    }

    /// Identifies the data (frequencies and traces), independent of hypothesis.
    std::uint64_t data_fingerprint() const { return fingerprint_; }

  private:
    void build(const FrequencyTable& freqs, const std::map<std::string, GenotypeProfile>& profiles) {
        if (hypothesis_.contributor_count() == 0) throw EvidenceError("hypothesis " + hypothesis_.id + " has no contributors");
        std::set<std::string> roles;
        for (const auto& r : hypothesis_.known) {
            if (!roles.insert(r).second) throw EvidenceError("duplicate contributor role '" + r + "'");
            auto it = profiles.find(r);
            if (it == profiles.end()) throw EvidenceError("known contributor '" + r + "' has no profile");
            known_profiles_.push_back(it->second);
        }
        for (const auto& r : hypothesis_.unknown) {
            if (!roles.insert(r).second) throw EvidenceError("duplicate contributor role '" + r + "'");
        }
        std::set<std::string> trace_ids;
        for (const auto& t : traces_) {
            if (!trace_ids.insert(t.id).second) throw EvidenceError("duplicate trace id '" + t.id + "'");
            if (!(t.threshold > 0.0)) throw EvidenceError("trace " + t.id + ": threshold must be positive");
        }
        for (const auto& [tid, _] : hypothesis_.trace_roles) {
            if (!trace_ids.count(tid)) throw EvidenceError("hypothesis refers to unknown trace '" + tid + "'");
        }

        const std::size_t nk = hypothesis_.known.size();
        for (const auto& t : traces_) {
            std::vector<std::size_t> members;
            auto it = hypothesis_.trace_roles.find(t.id);
            if (it == hypothesis_.trace_roles.end()) {
                for (std::size_t c = 0; c < hypothesis_.contributor_count(); ++c) members.push_back(c);
            } else {
                for (const auto& role : it->second) {
                    std::size_t c = 0;
                    for (; c < hypothesis_.contributor_count(); ++c) {
                        if (contributor_name(c) == role) break;
                    }
                    if (c == hypothesis_.contributor_count()) {
                        throw EvidenceError("trace " + t.id + " lists undeclared role '" + role + "'");
                    }
                    members.push_back(c);
                }
                std::sort(members.begin(), members.end());
                members.erase(std::unique(members.begin(), members.end()), members.end());
            }
            members_.push_back(std::move(members));
        }

        std::set<std::string> used;
        for (const auto& t : traces_) {
            for (const auto& [m, _] : t.markers) {
                if (!freqs.find(m)) throw EvidenceError("trace " + t.id + ": marker '" + m + "' not in frequency table");
                used.insert(m);
            }
        }
        std::vector<MarkerFrequencies> kept;
        for (const auto& mf : freqs.markers()) {
            if (!used.count(mf.marker)) continue;
            kept.push_back(mf);
            markers_.push_back(compile_marker(mf, nk));
        }
        freqs_ = FrequencyTable(std::move(kept));

        std::ostringstream os;
        os.precision(17);
        for (const auto& mf : freqs_.markers()) {
            os << mf.marker << ':';
            for (std::size_t a = 0; a < mf.size(); ++a) os << mf.alleles[a].text() << '=' << mf.freqs[a] << ',';
        }
        for (const auto& t : traces_) {
            os << '|' << t.id << '@' << t.threshold;
            for (const auto& [m, peaks] : t.markers) {
                os << m << ':';
                for (const auto& p : peaks) os << p.allele.text() << '=' << p.height << ',';
            }
        }
        fingerprint_ = std::hash<std::string>{}(os.str());
    }

    CompiledMarker compile_marker(const MarkerFrequencies& mf, std::size_t nk) const {
        CompiledMarker cm;
        cm.name = mf.marker;
        cm.ladder = mf;
        cm.chain = chain_order(mf);
        for (auto i : cm.chain) cm.chain_q.push_back(mf.freqs[i]);
        for (std::size_t a = 0; a < mf.size(); ++a) cm.successor.push_back(stutter_successor(mf, mf.alleles[a]));
        for (std::size_t j = 0; j < cm.chain.size(); ++j) {
            const auto& s = cm.successor[cm.chain[j]];
            const bool next = j + 1 < cm.chain.size() && s && *s == cm.chain[j + 1];
            if (s && !next) throw std::logic_error("chain order separates allele from its stutter donor");
            cm.successor_next.push_back(next);
        }
        for (const auto& t : traces_) {
            auto it = t.markers.find(mf.marker);
            cm.trace_typed.push_back(it != t.markers.end());
            std::vector<PeakObservation> obs(mf.size(), PeakObservation::make(0.0, t.threshold));
            if (it != t.markers.end()) {
                std::vector<bool> seen(mf.size(), false);
                for (const auto& p : it->second) {
                    auto idx = mf.index_of(p.allele);
                    if (!idx || mf.alleles[*idx].is_silent()) {
                        throw EvidenceError("trace " + t.id + ", marker " + mf.marker + ": allele " + p.allele.text() +
                                            " not in frequency table");
                    }
                    if (seen[*idx]) {
                        throw EvidenceError("trace " + t.id + ", marker " + mf.marker + ": allele " + p.allele.text() +
                                            " listed twice");
                    }
                    if (p.height < 0.0) throw EvidenceError("negative peak height in trace " + t.id);
                    seen[*idx] = true;
                    obs[*idx] = PeakObservation::make(p.height, t.threshold);
                }
            }
            cm.observations.push_back(std::move(obs));
        }
        for (std::size_t k = 0; k < nk; ++k) {
            const auto* g = known_profiles_[k].genotype(mf.marker);
            if (!g) {
                throw EvidenceError("known contributor '" + hypothesis_.known[k] + "' is not typed on marker " +
                                    mf.marker);
            }
            try {
                cm.known_counts.push_back(allele_counts(*g, mf));
            } catch (const std::invalid_argument& e) {
                throw EvidenceError("known contributor '" + hypothesis_.known[k] + "': " + e.what());
            }
        }
        return cm;
    }

    std::vector<Trace> traces_;
    Hypothesis hypothesis_;
    FrequencyTable freqs_;
    std::vector<GenotypeProfile> known_profiles_;
    std::vector<std::vector<std::size_t>> members_;
    std::vector<CompiledMarker> markers_;
    std::uint64_t fingerprint_ = 0;
};

/// Parameters as they apply to one marker of one trace after overrides.
struct EffectiveParameters {
    double rho;
    double eta;
    double xi;
};

inline EffectiveParameters effective_parameters(const ModelParameters& params, const std::string& marker,
                                                std::size_t trace) {
    const auto& tp = params.traces.at(trace);
    EffectiveParameters e{tp.rho, tp.eta, tp.xi};
    auto it = params.marker_overrides.find(marker);
    if (it != params.marker_overrides.end()) {
        if (it->second.rho) e.rho = it->second.rho->at(trace);
        if (it->second.xi) e.xi = *it->second.xi;
    }
    return e;
}

}  // namespace mixref
