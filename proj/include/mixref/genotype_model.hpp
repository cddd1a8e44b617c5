#pragma once

// Allele ladders, Hardy-Weinberg genotype priors in sequential (chain) form,
// silent alleles, stutter topology and match probabilities.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace mixref {

/// Allele designation such as "13", "9.3" or "X". Numeric labels carry the
/// whole repeat count and the partial-repeat suffix separately so that the
/// stutter relation (x+1).y -> x.y can be evaluated exactly.
class AlleleLabel {
  public:
    AlleleLabel() = default;

    static AlleleLabel parse(const std::string& text) {
        AlleleLabel label;
        label.text_ = text;
        if (text.empty()) throw std::invalid_argument("empty allele label");
        const auto dot = text.find('.');
        const std::string whole = text.substr(0, dot);
        const std::string partial = dot == std::string::npos ? "" : text.substr(dot + 1);
        if (parse_int(whole, label.whole_) && (dot == std::string::npos || parse_int(partial, label.partial_))) {
            label.numeric_ = true;
        } else {
            label.whole_ = label.partial_ = 0;
        }
        return label;
    }

    static AlleleLabel silent() {
        AlleleLabel label;
        label.text_ = "silent";
        label.silent_ = true;
        return label;
    }

    const std::string& text() const { return text_; }
    bool numeric() const { return numeric_; }
    bool is_silent() const { return silent_; }
    int whole() const { return whole_; }
    int partial() const { return partial_; }

    /// Same partial repeat, one more whole repeat.
    bool is_successor_of(const AlleleLabel& other) const {
        return numeric_ && other.numeric_ && partial_ == other.partial_ && whole_ == other.whole_ + 1;
    }

    friend bool operator==(const AlleleLabel& a, const AlleleLabel& b) {
        return a.silent_ == b.silent_ && a.text_ == b.text_;
    }

    /// Silent first, then numeric by repeat number, then other labels.
    friend bool operator<(const AlleleLabel& a, const AlleleLabel& b) {
        if (a.silent_ != b.silent_) return a.silent_;
        if (a.numeric_ != b.numeric_) return a.numeric_;
        if (a.numeric_) return std::pair(a.whole_, a.partial_) < std::pair(b.whole_, b.partial_);
        return a.text_ < b.text_;
    }

  private:
    static bool parse_int(const std::string& s, int& out) {
        if (s.empty()) return false;
        const auto* end = s.data() + s.size();
        auto [ptr, ec] = std::from_chars(s.data(), end, out);
        return ec == std::errc{} && ptr == end && out >= 0;
    }

    std::string text_;
    int whole_ = 0;
    int partial_ = 0;
    bool numeric_ = false;
    bool silent_ = false;
};

/// Ladder and population frequencies of one marker, ordered by repeat number.
/// When a silent allele is present it occupies index 0.
struct MarkerFrequencies {
    std::string marker;
    std::vector<AlleleLabel> alleles;
    std::vector<double> freqs;

    std::size_t size() const { return alleles.size(); }
    bool has_silent() const { return !alleles.empty() && alleles.front().is_silent(); }

    std::optional<std::size_t> index_of(const AlleleLabel& label) const {
        for (std::size_t i = 0; i < alleles.size(); ++i) {
            if (alleles[i] == label) return i;
        }
        return std::nullopt;
    }
    std::optional<std::size_t> index_of(const std::string& text) const {
        return index_of(text == "silent" ? AlleleLabel::silent() : AlleleLabel::parse(text));
    }
};

class FrequencyTable {
  public:
    FrequencyTable() = default;

    /// Sorts each ladder and checks positivity, uniqueness and unit sum.
    explicit FrequencyTable(std::vector<MarkerFrequencies> markers) : markers_(std::move(markers)) {
        for (auto& m : markers_) normalize_order(m);
    }

    const std::vector<MarkerFrequencies>& markers() const { return markers_; }

    const MarkerFrequencies* find(const std::string& marker) const {
        for (const auto& m : markers_) {
            if (m.marker == marker) return &m;
        }
        return nullptr;
    }

    const MarkerFrequencies& at(const std::string& marker) const {
        const auto* m = find(marker);
        if (!m) throw std::out_of_range("marker '" + marker + "' not in frequency table");
        return *m;
    }

  private:
    static void normalize_order(MarkerFrequencies& m) {
        if (m.alleles.size() != m.freqs.size()) {
            throw std::invalid_argument("marker " + m.marker + ": allele and frequency counts differ");
        }
        if (m.alleles.empty()) throw std::invalid_argument("marker " + m.marker + " has no alleles");
        std::vector<std::size_t> idx(m.alleles.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return m.alleles[a] < m.alleles[b]; });
        MarkerFrequencies sorted{m.marker, {}, {}};
        double total = 0.0;
        for (auto i : idx) {
            if (!(m.freqs[i] > 0.0)) {
                throw std::invalid_argument("marker " + m.marker + ": frequency of allele " + m.alleles[i].text() +
                                            " must be positive");
            }
            if (!sorted.alleles.empty() && sorted.alleles.back() == m.alleles[i]) {
                throw std::invalid_argument("marker " + m.marker + ": duplicate allele " + m.alleles[i].text());
            }
            sorted.alleles.push_back(m.alleles[i]);
            sorted.freqs.push_back(m.freqs[i]);
            total += m.freqs[i];
        }
        if (std::fabs(total - 1.0) > 1e-9) {
            throw std::invalid_argument("marker " + m.marker + ": frequencies sum to " + std::to_string(total));
        }
        m = std::move(sorted);
    }

    std::vector<MarkerFrequencies> markers_;
};

using Genotype = std::pair<AlleleLabel, AlleleLabel>;

/// Genotypes of one individual; markers absent from the map are untyped.
struct GenotypeProfile {
    std::string id;
    std::map<std::string, Genotype> markers;

    const Genotype* genotype(const std::string& marker) const {
        auto it = markers.find(marker);
        return it == markers.end() ? nullptr : &it->second;
    }
};

/// Allele-count vector of a genotype over a marker ladder.
inline std::vector<int> allele_counts(const Genotype& g, const MarkerFrequencies& m) {
    std::vector<int> counts(m.size(), 0);
    for (const auto* label : {&g.first, &g.second}) {
        auto i = m.index_of(*label);
        if (!i) throw std::invalid_argument("allele " + label->text() + " not in ladder of marker " + m.marker);
        ++counts[*i];
    }
    return counts;
}

/// Ladder index of the allele one whole repeat above `label`, if present.
/// That allele is the stutter donor into `label`.
inline std::optional<std::size_t> stutter_successor(const MarkerFrequencies& m, const AlleleLabel& label) {
    if (label.is_silent()) return std::nullopt;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m.alleles[i].is_successor_of(label)) return i;
    }
    return std::nullopt;
}

/// Order in which the genotype chain visits ladder indices: silent allele
/// first, then numeric alleles grouped by partial repeat and ascending within
/// each group, then non-numeric labels. Within this order the stutter donor of
/// every allele is either the next position or absent.
inline std::vector<std::size_t> chain_order(const MarkerFrequencies& m) {
    std::vector<std::size_t> order(m.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto key = [&](std::size_t i) {
        const auto& a = m.alleles[i];
        const int group = a.is_silent() ? 0 : (a.numeric() ? 1 : 2);
        return std::tuple(group, a.partial(), a.whole(), i);
    };
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return key(x) < key(y); });
    return order;
}

/// Distribution of the next allele count given the partial sum so far:
/// Bin(2 - s_prev, q_pos / sum_{b >= pos} q_b). `q` is in chain order.
inline std::array<double, 3> chain_conditional(std::span<const double> q, std::size_t position, int s_prev) {
    if (s_prev < 0 || s_prev > 2) throw std::invalid_argument("chain_conditional: partial sum must be 0, 1 or 2");
    if (position >= q.size()) throw std::out_of_range("chain_conditional: position outside ladder");
    const int trials = 2 - s_prev;
    std::array<double, 3> dist{0.0, 0.0, 0.0};
    if (trials == 0) {
        dist[0] = 1.0;
        return dist;
    }
    double tail = 0.0;
    for (std::size_t b = position; b < q.size(); ++b) tail += q[b];
    if (!(tail > 0.0)) throw std::domain_error("chain_conditional: zero tail frequency with alleles left to place");
    const double p = position + 1 == q.size() ? 1.0 : std::min(1.0, q[position] / tail);
    const double r = 1.0 - p;
    if (trials == 1) {
        dist[0] = r;
        dist[1] = p;
    } else {
        dist[0] = r * r;
        dist[1] = 2.0 * p * r;
        dist[2] = p * p;
    }
    return dist;
}

/// Frequencies of a marker rearranged into chain order.
inline std::vector<double> chain_frequencies(const MarkerFrequencies& m) {
    std::vector<double> q;
    for (auto i : chain_order(m)) q.push_back(m.freqs[i]);
    return q;
}

/// Hardy-Weinberg probability of an allele-count vector (sum 2).
inline double genotype_prior(std::span<const int> counts, const MarkerFrequencies& m) {
    if (counts.size() != m.size()) throw std::invalid_argument("genotype_prior: count vector does not match ladder");
    int total = 0;
    double p = 1.0;
    int distinct = 0;
    for (std::size_t a = 0; a < counts.size(); ++a) {
        if (counts[a] < 0 || counts[a] > 2) throw std::invalid_argument("genotype_prior: counts must be 0, 1 or 2");
        total += counts[a];
        if (counts[a] > 0) {
            p *= counts[a] == 2 ? m.freqs[a] * m.freqs[a] : m.freqs[a];
            ++distinct;
        }
    }
    if (total != 2) throw std::invalid_argument("genotype_prior: counts must sum to 2");
    return distinct == 2 ? 2.0 * p : p;
}

inline double genotype_prior(const Genotype& g, const MarkerFrequencies& m) {
    const auto counts = allele_counts(g, m);
    return genotype_prior(counts, m);
}

/// Probability that a random individual shares `profile` on every typed
/// marker of `freqs` (restricted to `markers` when given).
inline double match_probability(const GenotypeProfile& profile, const FrequencyTable& freqs,
                                const std::vector<std::string>* markers = nullptr) {
    double p = 1.0;
    int typed = 0;
    for (const auto& m : freqs.markers()) {
        if (markers && std::find(markers->begin(), markers->end(), m.marker) == markers->end()) continue;
        const auto* g = profile.genotype(m.marker);
        if (!g) continue;
        p *= genotype_prior(*g, m);
        ++typed;
    }
    if (typed == 0) throw std::invalid_argument("match_probability: profile " + profile.id + " is untyped");
    return p;
}

/// Adds a silent allele with frequency q0 to every marker; visible alleles
/// keep their relative frequencies.
inline FrequencyTable with_silent(const FrequencyTable& freqs, double q0) {
    if (q0 < 0.0 || q0 >= 1.0) throw std::invalid_argument("with_silent: q0 must lie in [0, 1)");
    if (q0 == 0.0) return freqs;
    std::vector<MarkerFrequencies> out;
    for (const auto& m : freqs.markers()) {
        if (m.has_silent()) throw std::invalid_argument("marker " + m.marker + " already has a silent allele");
        MarkerFrequencies s{m.marker, {AlleleLabel::silent()}, {q0}};
        for (std::size_t a = 0; a < m.size(); ++a) {
            s.alleles.push_back(m.alleles[a]);
            s.freqs.push_back((1.0 - q0) * m.freqs[a]);
        }
        out.push_back(std::move(s));
    }
    return FrequencyTable(std::move(out));
}

}  // namespace mixref
