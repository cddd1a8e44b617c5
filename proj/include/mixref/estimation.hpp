#pragma once

// Maximum-likelihood fitting under sharing and fixing constraints, standard
// errors from a numerical Hessian, weight of evidence, profile likelihoods
// and contributor-count sweeps.

#include <gsl/gsl_linalg.h>
#include <gsl/gsl_matrix.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixref/evidence.hpp"
#include "mixref/genotype_model.hpp"
#include "mixref/inference_engine.hpp"
#include "mixref/model_core.hpp"
#include "mixref/optimizer.hpp"

namespace mixref {

/// Which parameters take one common value across traces. rho is always per trace.
struct SharingSpec {
    bool eta = true;
    bool xi = true;
    bool phi = false;
};

/// Parameters held at given values. Per-trace entries are keyed by trace id;
/// phi vectors follow the trace's contributor order (knowns, then unknowns).
/// mu needs eta (or sigma) fixed as well, since rho = mu / eta.
struct FixedParameters {
    std::optional<double> eta;
    std::optional<double> xi;
    std::map<std::string, double> rho;
    std::map<std::string, double> mu;
    std::map<std::string, double> sigma;
    std::map<std::string, std::vector<double>> phi;
};

struct FitSpecification {
    std::shared_ptr<const Evidence> evidence;
    SharingSpec sharing;
    FixedParameters fixed;
    MinimizeSettings optimizer;
    int multistart = 2;  // random starts in addition to the structured ones
    std::uint64_t seed = 1;
    std::vector<ModelParameters> warm_starts;
    bool structured_starts = true;  // equal fractions and each contributor as the major one
    bool standard_errors = true;
};

enum class Boundary { none, zero, tied };

inline const char* to_string(Boundary b) {
    switch (b) {
        case Boundary::zero: return "zero";
        case Boundary::tied: return "tied";
        default: return "none";
    }
}

struct ParameterEstimate {
    std::string name;         // mu, sigma, xi or phi
    std::string trace;
    std::string contributor;  // phi only
    double estimate = 0.0;
    std::optional<double> se;
    bool fixed = false;
    Boundary boundary = Boundary::none;
};

struct FitResult {
    std::string hypothesis;
    std::vector<std::string> trace_ids;
    std::vector<std::vector<std::string>> contributors;  // per trace
    ModelParameters params;
    double log_likelihood = kNegInf;
    double log10_likelihood = kNegInf;
    bool converged = false;
    int iterations = 0;
    int evaluations = 0;
    int starts = 0;
    double gradient_norm = 0.0;
    bool standard_errors_available = false;
    std::string standard_error_note;
    std::vector<ParameterEstimate> estimates;
    std::uint64_t data_fingerprint = 0;

    const ParameterEstimate* find(const std::string& name, const std::string& trace,
                                  const std::string& contributor = "") const {
        for (const auto& e : estimates) {
            if (e.name == name && e.trace == trace && e.contributor == contributor) return &e;
        }
        return nullptr;
    }
};

class FitError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr double kCoordinateClamp = 30.0;
inline constexpr double kBoundaryTolerance = 1e-4;

inline double clamp_coordinate(double y) { return std::clamp(y, -kCoordinateClamp, kCoordinateClamp); }

inline double logistic(double y) { return 1.0 / (1.0 + std::exp(-clamp_coordinate(y))); }

inline double logit(double p) { return clamp_coordinate(std::log(p) - std::log1p(-p)); }

/// Maps between ModelParameters and the unconstrained coordinates searched by
/// the optimizer: log rho, log eta, logit xi, and for phi a weight per
/// contributor (exp of a coordinate for knowns; for unknowns the cumulative sum
/// of exp-coordinates from the last unknown upwards, which keeps them ordered),
/// normalized to the simplex. The scale of the weights is fixed by pinning the
/// first known to 1; a group without knowns keeps a coordinate per unknown and
/// the penalty pulls their mean towards 0 instead.
class ParameterLayout {
  public:
    ParameterLayout(const Evidence& ev, const SharingSpec& sharing, const FixedParameters& fixed) : ev_(ev) {
        const std::size_t nt = ev.traces().size();
        const auto flags = ev.unknown_flags();
        for (std::size_t t = 0; t < nt; ++t) {
            eta_group_.push_back(sharing.eta ? 0 : t);
            xi_group_.push_back(sharing.xi ? 0 : t);
            phi_group_.push_back(sharing.phi ? 0 : t);
        }
        n_eta_ = sharing.eta ? std::min<std::size_t>(nt, 1) : nt;
        n_xi_ = sharing.xi ? std::min<std::size_t>(nt, 1) : nt;
        const std::size_t n_phi = sharing.phi ? std::min<std::size_t>(nt, 1) : nt;
        if (sharing.phi) {
            for (std::size_t t = 1; t < nt; ++t) {
                if (ev.members(t) != ev.members(0)) {
                    throw std::invalid_argument("sharing phi requires the same contributors in every trace");
                }
            }
        }
        phi_flags_.resize(n_phi);
        for (std::size_t t = 0; t < nt; ++t) phi_flags_[phi_group_[t]] = flags[t];
        rho_fixed_.assign(nt, std::nullopt);
        eta_fixed_.assign(n_eta_, std::nullopt);
        xi_fixed_.assign(n_xi_, std::nullopt);
        phi_fixed_.assign(n_phi, std::nullopt);
        resolve_fixed(fixed);

        std::size_t offset = 0;
        for (std::size_t t = 0; t < nt; ++t) rho_index_.push_back(rho_fixed_[t] ? npos : offset++);
        for (std::size_t g = 0; g < n_eta_; ++g) eta_index_.push_back(eta_fixed_[g] ? npos : offset++);
        for (std::size_t g = 0; g < n_xi_; ++g) xi_index_.push_back(xi_fixed_[g] ? npos : offset++);
        for (std::size_t g = 0; g < n_phi; ++g) {
            phi_index_.push_back(offset);
            const std::size_t m = phi_flags_[g].size();
            if (!phi_fixed_[g] && m > 1) offset += phi_pin(g) == npos ? m : m - 1;
        }
        free_ = offset;
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    /// Quadratic penalty outside the coordinate box, plus the squared mean of
    /// each group of phi coordinates. Beyond the box the parameters stop
    /// changing, and without it the simplex would drift there.
    double box_penalty(const std::vector<double>& x) const {
        double p = 0.0;
        for (double v : x) {
            const double excess = std::fabs(v) - kCoordinateClamp;
            if (excess > 0.0) p += excess * excess;
        }
        for (std::size_t g = 0; g < phi_flags_.size(); ++g) {
            const std::size_t m = phi_flags_[g].size();
            if (phi_fixed_[g] || m < 2 || phi_pin(g) != npos) continue;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += x[phi_index_[g] + i];
            mean /= static_cast<double>(m);
            p += mean * mean;
        }
        return p;
    }

    std::size_t free_count() const { return free_; }
    std::size_t eta_group(std::size_t t) const { return eta_group_[t]; }
    std::size_t xi_group(std::size_t t) const { return xi_group_[t]; }
    std::size_t phi_group(std::size_t t) const { return phi_group_[t]; }
    bool rho_fixed(std::size_t t) const { return rho_fixed_[t].has_value(); }
    bool eta_fixed(std::size_t t) const { return eta_fixed_[eta_group_[t]].has_value(); }
    bool xi_fixed(std::size_t t) const { return xi_fixed_[xi_group_[t]].has_value(); }
    bool phi_fixed(std::size_t t) const { return phi_fixed_[phi_group_[t]].has_value(); }

    ModelParameters to_params(const std::vector<double>& x) const {
        ModelParameters p;
        for (std::size_t t = 0; t < ev_.traces().size(); ++t) {
            TraceParameters tp;
            tp.rho = rho_fixed_[t] ? *rho_fixed_[t] : std::exp(clamp_coordinate(x[rho_index_[t]]));
            const auto ge = eta_group_[t];
            tp.eta = eta_fixed_[ge] ? *eta_fixed_[ge] : std::exp(clamp_coordinate(x[eta_index_[ge]]));
            const auto gx = xi_group_[t];
            tp.xi = xi_fixed_[gx] ? *xi_fixed_[gx] : logistic(x[xi_index_[gx]]);
            tp.xi = std::min(tp.xi, 1.0 - 1e-12);
            const auto gp = phi_group_[t];
            tp.phi = phi_fixed_[gp] ? *phi_fixed_[gp] : phi_from_coordinates(gp, x);
            p.traces.push_back(std::move(tp));
        }
        return p;
    }

    /// Coordinates of p for the free parameters (fixed entries are ignored).
    std::vector<double> to_internal(const ModelParameters& p) const {
        std::vector<double> x(free_, 0.0);
        const std::size_t nt = ev_.traces().size();
        if (p.traces.size() != nt) throw std::invalid_argument("starting point has the wrong number of traces");
        for (std::size_t t = 0; t < nt; ++t) {
            const auto& tp = p.traces[t];
            if (rho_index_[t] != npos) x[rho_index_[t]] = std::log(tp.rho);
            const auto ge = eta_group_[t];
            if (eta_index_[ge] != npos) x[eta_index_[ge]] = std::log(tp.eta);
            const auto gx = xi_group_[t];
            if (xi_index_[gx] != npos) x[xi_index_[gx]] = logit(std::clamp(tp.xi, 1e-13, 1.0 - 1e-9));
            const auto gp = phi_group_[t];
            if (!phi_fixed_[gp] && phi_flags_[gp].size() > 1) {
                if (tp.phi.size() != phi_flags_[gp].size()) throw std::invalid_argument("starting phi has wrong size");
                const auto y = coordinates_from_phi(gp, tp.phi);
                std::copy(y.begin(), y.end(), x.begin() + static_cast<std::ptrdiff_t>(phi_index_[gp]));
            }
        }
        return x;
    }

    /// Number of deterministic starting points: equal fractions, then each
    /// contributor position in turn as the major one.
    int structured_starts() const {
        std::size_t m = 0;
        for (const auto& f : phi_flags_) m = std::max(m, f.size());
        return 1 + static_cast<int>(m > 1 ? m : 0);
    }

    /// Starting point `kind`: structured for kind < structured_starts(),
    /// otherwise random (fractions, mean height and xi) drawn from `rng`.
    ModelParameters start(int kind, std::mt19937_64& rng) const {
        ModelParameters p;
        const std::size_t nt = ev_.traces().size();
        const bool random = kind >= structured_starts();
        const double sigma0 = 0.3;
        std::vector<double> mu0(nt);
        double eta_sum = 0.0;
        for (std::size_t t = 0; t < nt; ++t) {
            mu0[t] = typical_height(t);
            if (random) mu0[t] *= std::exp(std::uniform_real_distribution<double>(-0.5, 0.5)(rng));
            eta_sum += mu0[t] * sigma0 * sigma0;
        }
        const double xi0 = random ? std::uniform_real_distribution<double>(0.01, 0.2)(rng) : 0.05;
        std::vector<std::vector<double>> phi;
        for (const auto& flags : phi_flags_) phi.push_back(start_phi(random ? -1 : kind - 1, flags, rng));
        for (std::size_t t = 0; t < nt; ++t) {
            TraceParameters tp;
            tp.eta = n_eta_ == 1 ? eta_sum / static_cast<double>(nt) : mu0[t] * sigma0 * sigma0;
            tp.rho = mu0[t] / tp.eta;
            tp.xi = xi0;
            tp.phi = phi[phi_group_[t]];
            p.traces.push_back(std::move(tp));
        }
        return p;
    }

  private:
    void resolve_fixed(const FixedParameters& fixed) {
        const auto& traces = ev_.traces();
        auto trace_index = [&](const std::string& id) {
            for (std::size_t t = 0; t < traces.size(); ++t) {
                if (traces[t].id == id) return t;
            }
            throw std::invalid_argument("fixed parameter refers to unknown trace '" + id + "'");
        };
        auto set_eta = [&](std::size_t g, double v) {
            if (!(v > 0.0)) throw std::invalid_argument("fixed eta must be positive");
            if (eta_fixed_[g] && std::fabs(*eta_fixed_[g] - v) > 1e-9 * v) {
                throw std::invalid_argument("conflicting fixed values for shared eta");
            }
            eta_fixed_[g] = v;
        };
        auto set_rho = [&](std::size_t t, double v) {
            if (!(v > 0.0)) throw std::invalid_argument("fixed rho must be positive");
            if (rho_fixed_[t] && std::fabs(*rho_fixed_[t] - v) > 1e-9 * v) {
                throw std::invalid_argument("conflicting fixed values for rho of trace " + traces[t].id);
            }
            rho_fixed_[t] = v;
        };
        if (fixed.eta) {
            for (std::size_t g = 0; g < n_eta_; ++g) set_eta(g, *fixed.eta);
        }
        if (fixed.xi) {
            if (!(*fixed.xi >= 0.0 && *fixed.xi < 1.0)) throw std::invalid_argument("fixed xi must lie in [0, 1)");
            for (auto& x : xi_fixed_) x = *fixed.xi;
        }
        for (const auto& [id, v] : fixed.rho) set_rho(trace_index(id), v);
        for (const auto& [id, s] : fixed.sigma) {
            if (!(s > 0.0)) throw std::invalid_argument("fixed sigma must be positive");
            const auto t = trace_index(id);
            set_rho(t, 1.0 / (s * s));
            auto mu = fixed.mu.find(id);
            if (mu != fixed.mu.end()) set_eta(eta_group_[t], params_from_mean_cv(mu->second, s).eta);
        }
        for (const auto& [id, mu] : fixed.mu) {
            if (!(mu > 0.0)) throw std::invalid_argument("fixed mu must be positive");
            const auto t = trace_index(id);
            if (fixed.sigma.count(id)) continue;
            const auto& eta = eta_fixed_[eta_group_[t]];
            if (!eta) throw std::invalid_argument("fixing mu of trace " + id + " requires eta or sigma to be fixed");
            set_rho(t, mu / *eta);
        }
        for (const auto& [id, phi] : fixed.phi) {
            const auto t = trace_index(id);
            const auto g = phi_group_[t];
            std::vector<double> v = phi;
            const auto& flags = phi_flags_[g];
            if (v.size() != flags.size()) {
                throw std::invalid_argument("fixed phi of trace " + id + " needs " + std::to_string(flags.size()) +
                                            " entries");
            }
            double total = 0.0;
            for (double x : v) {
                if (x < 0.0) throw std::invalid_argument("fixed phi entries must be nonnegative");
                total += x;
            }
            if (std::fabs(total - 1.0) > 1e-6) throw std::invalid_argument("fixed phi of trace " + id + " must sum to 1");
            for (auto& x : v) x /= total;
            ModelParameters probe;
            probe.traces.push_back({1.0, 1.0, 0.0, v});
            validate_parameters(probe, {flags});
            if (phi_fixed_[g] && *phi_fixed_[g] != v) throw std::invalid_argument("conflicting fixed values for shared phi");
            phi_fixed_[g] = v;
        }
    }

    /// The first known of a phi group, or npos.
    std::size_t phi_pin(std::size_t g) const {
        const auto& flags = phi_flags_[g];
        for (std::size_t i = 0; i < flags.size(); ++i) {
            if (!flags[i]) return i;
        }
        return npos;
    }

    std::vector<double> phi_from_coordinates(std::size_t g, const std::vector<double>& x) const {
        const auto& flags = phi_flags_[g];
        const std::size_t m = flags.size();
        if (m == 0) return {};
        if (m == 1) return {1.0};
        std::vector<double> e(m);
        const std::size_t pin = phi_pin(g);
        std::size_t k = phi_index_[g];
        for (std::size_t i = 0; i < m; ++i) e[i] = i == pin ? 1.0 : std::exp(clamp_coordinate(x[k++]));
        std::vector<double> w(m);
        double tail = 0.0;
        for (std::size_t i = m; i-- > 0;) {
            if (flags[i]) {
                tail += e[i];
                w[i] = tail;
            } else {
                w[i] = e[i];
            }
        }
        double total = 0.0;
        for (double v : w) total += v;
        for (auto& v : w) v /= total;
        return w;
    }

    std::vector<double> coordinates_from_phi(std::size_t g, const std::vector<double>& phi) const {
        const auto& flags = phi_flags_[g];
        const std::size_t m = flags.size();
        std::vector<double> raw(m);
        std::optional<std::size_t> next_unknown;
        for (std::size_t i = m; i-- > 0;) {
            if (flags[i]) {
                raw[i] = phi[i] - (next_unknown ? phi[*next_unknown] : 0.0);
                next_unknown = i;
            } else {
                raw[i] = phi[i];
            }
        }
        const double top = *std::max_element(raw.begin(), raw.end());
        const std::size_t pin = phi_pin(g);
        if (pin != npos) {
            std::vector<double> y;
            const double base = std::max(raw[pin], 1e-300);
            for (std::size_t i = 0; i < m; ++i) {
                if (i != pin) y.push_back(clamp_coordinate(std::log(std::max(raw[i], 1e-300) / base)));
            }
            return y;
        }
        // As small as the centred coordinates allow: a vanishing fraction must
        // stay negligible even when rho sits near the box edge.
        const double span = (kCoordinateClamp - 1.0) * static_cast<double>(m) / static_cast<double>(m - 1);
        for (auto& r : raw) r = std::max(r, std::exp(-span) * std::max(top, 1e-300));
        std::vector<double> y(m);
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            y[i] = std::log(raw[i]);
            mean += y[i] / static_cast<double>(m);
        }
        for (auto& v : y) v -= mean;
        return y;
    }

    /// Fractions with contributor `major` at 0.7 and the others decaying by
    /// halves; all equal when major is out of range; Dirichlet(1) when -1.
    static std::vector<double> start_phi(int major, const std::vector<bool>& flags, std::mt19937_64& rng) {
        const std::size_t m = flags.size();
        std::vector<double> w(m, 1.0);
        if (major < 0) {
            std::exponential_distribution<double> ex(1.0);
            for (auto& v : w) v = ex(rng) + 0.01;
        } else if (static_cast<std::size_t>(major) < m && m > 1) {
            double g = 0.3;
            double rest = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                if (static_cast<int>(i) == major) continue;
                rest += g;
                w[i] = g;
                g *= 0.5;
            }
            for (std::size_t i = 0; i < m; ++i) {
                if (static_cast<int>(i) != major) w[i] *= 0.3 / rest;
            }
            w[major] = 0.7;
        }
        double total = 0.0;
        for (double v : w) total += v;
        for (auto& v : w) v /= total;
        std::vector<double> u;
        for (std::size_t i = 0; i < m; ++i) {
            if (flags[i]) u.push_back(w[i]);
        }
        std::sort(u.rbegin(), u.rend());
        for (std::size_t i = 0, k = 0; i < m; ++i) {
            if (flags[i]) w[i] = u[k++];
        }
        return w;
    }

    /// Mean summed height per typed marker, halved (two alleles per marker).
    double typical_height(std::size_t t) const {
        double total = 0.0;
        int markers = 0;
        for (const auto& cm : ev_.markers()) {
            if (!cm.trace_typed[t]) continue;
            double s = 0.0;
            for (const auto& o : cm.observations[t]) s += o.height;
            total += s;
            ++markers;
        }
        const double c = ev_.traces()[t].threshold;
        if (markers == 0) return 10.0 * c;
        return std::max(total / (2.0 * markers), 2.0 * c);
    }

    const Evidence& ev_;
    std::vector<std::size_t> eta_group_, xi_group_, phi_group_;
    std::size_t n_eta_ = 0, n_xi_ = 0;
    std::vector<std::vector<bool>> phi_flags_;
    std::vector<std::optional<double>> rho_fixed_, eta_fixed_, xi_fixed_;
    std::vector<std::optional<std::vector<double>>> phi_fixed_;
    std::vector<std::size_t> rho_index_, eta_index_, xi_index_, phi_index_;
    std::size_t free_ = 0;
};

/// A direction in parameter space along which the Hessian is taken, and the
/// derivative of every reported quantity along it.
struct HessianDirection {
    std::function<void(ModelParameters&, double)> move;
    double scale = 1.0;  // magnitude used for the relative step
};

}  // namespace detail

inline std::vector<std::vector<std::string>> contributor_names(const Evidence& ev) {
    std::vector<std::vector<std::string>> out;
    for (std::size_t t = 0; t < ev.traces().size(); ++t) {
        std::vector<std::string> names;
        for (auto c : ev.members(t)) names.push_back(ev.contributor_name(c));
        out.push_back(std::move(names));
    }
    return out;
}

/// Central-difference Hessian of f at x with steps max(1e-4 |x_i|, 1e-6).
inline std::vector<std::vector<double>> numerical_hessian(const std::function<double(const std::vector<double>&)>& f,
                                                          const std::vector<double>& x,
                                                          std::vector<double>* gradient = nullptr) {
    const std::size_t n = x.size();
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = std::max(1e-4 * std::fabs(x[i]), 1e-6);
    const double f0 = f(x);
    std::vector<std::vector<double>> H(n, std::vector<double>(n, 0.0));
    std::vector<double> fp(n), fm(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto y = x;
        y[i] = x[i] + h[i];
        fp[i] = f(y);
        y[i] = x[i] - h[i];
        fm[i] = f(y);
        H[i][i] = (fp[i] - 2.0 * f0 + fm[i]) / (h[i] * h[i]);
    }
    if (gradient) {
        gradient->assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) (*gradient)[i] = (fp[i] - fm[i]) / (2.0 * h[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            auto y = x;
            y[i] = x[i] + h[i];
            y[j] = x[j] + h[j];
            const double fpp = f(y);
            y[j] = x[j] - h[j];
            const double fpm = f(y);
            y[i] = x[i] - h[i];
            const double fmm = f(y);
            y[j] = x[j] + h[j];
            const double fmp = f(y);
            H[i][j] = H[j][i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
        }
    }
    return H;
}

/// Inverse of a symmetric positive-definite matrix via Cholesky; nullopt when
/// the factorization fails.
inline std::optional<std::vector<std::vector<double>>> invert_spd(const std::vector<std::vector<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0) return std::vector<std::vector<double>>{};
    gsl_set_error_handler_off();
    gsl_matrix* m = gsl_matrix_alloc(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) gsl_matrix_set(m, i, j, a[i][j]);
    }
    std::optional<std::vector<std::vector<double>>> out;
    if (gsl_linalg_cholesky_decomp1(m) == GSL_SUCCESS && gsl_linalg_cholesky_invert(m) == GSL_SUCCESS) {
        out.emplace(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) (*out)[i][j] = gsl_matrix_get(m, i, j);
        }
    }
    gsl_matrix_free(m);
    return out;
}

/// Fills estimates, boundary flags and standard errors of `result`. The
/// Hessian is taken in the model's own coordinates (rho per trace, eta and xi
/// per sharing group, phi along simplex directions) and carried to (mu, sigma,
/// xi, phi) by the delta method. Parameters at zero are held there; tied
/// unknown fractions move together.
inline void standard_errors(FitResult& result, const FitSpecification& spec, bool hessian = true) {
    const Evidence& ev = *spec.evidence;
    const detail::ParameterLayout layout(ev, spec.sharing, spec.fixed);
    const auto& P = result.params;
    const std::size_t nt = P.traces.size();
    const double tol = detail::kBoundaryTolerance;

    std::vector<detail::HessianDirection> dirs;
    // Reported quantities and their gradients along each direction.
    struct Reported {
        ParameterEstimate est;
        std::vector<double> grad;  // filled once directions are known
        bool free = true;
    };
    std::vector<Reported> reported;

    std::vector<bool> seen_eta(nt, false), seen_xi(nt, false), seen_phi(nt, false);
    std::vector<std::optional<std::size_t>> rho_dir(nt), eta_dir(nt), xi_dir(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        if (!layout.rho_fixed(t)) {
            rho_dir[t] = dirs.size();
            dirs.push_back({[t](ModelParameters& p, double h) { p.traces[t].rho += h; }, P.traces[t].rho});
        }
    }
    for (std::size_t t = 0; t < nt; ++t) {
        const auto g = layout.eta_group(t);
        if (layout.eta_fixed(t) || seen_eta[g]) continue;
        seen_eta[g] = true;
        const std::size_t d = dirs.size();
        for (std::size_t s = 0; s < nt; ++s) {
            if (layout.eta_group(s) == g) eta_dir[s] = d;
        }
        dirs.push_back({[&layout, g, nt](ModelParameters& p, double h) {
                            for (std::size_t s = 0; s < nt; ++s) {
                                if (layout.eta_group(s) == g) p.traces[s].eta += h;
                            }
                        },
                        P.traces[t].eta});
    }
    std::vector<Boundary> xi_boundary(nt, Boundary::none);
    for (std::size_t t = 0; t < nt; ++t) {
        const auto g = layout.xi_group(t);
        if (P.traces[t].xi < tol) xi_boundary[t] = Boundary::zero;
        if (layout.xi_fixed(t) || seen_xi[g] || P.traces[t].xi < tol) continue;
        seen_xi[g] = true;
        const std::size_t d = dirs.size();
        for (std::size_t s = 0; s < nt; ++s) {
            if (layout.xi_group(s) == g) xi_dir[s] = d;
        }
        dirs.push_back({[&layout, g, nt](ModelParameters& p, double h) {
                            for (std::size_t s = 0; s < nt; ++s) {
                                if (layout.xi_group(s) == g) p.traces[s].xi += h;
                            }
                        },
                        P.traces[t].xi});
    }

    // phi: per group, members at zero are held, tied unknowns move together,
    // and the group containing the largest fraction absorbs the change.
    const auto flags = ev.unknown_flags();
    std::vector<std::vector<Boundary>> phi_boundary(nt);
    std::vector<std::vector<std::vector<std::pair<std::size_t, double>>>> phi_grad(nt);  // [t][i] -> (dir, d phi_i)
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& phi = P.traces[t].phi;
        const std::size_t m = phi.size();
        phi_boundary[t].assign(m, Boundary::none);
        phi_grad[t].assign(m, {});
        std::vector<int> block(m, -1);
        int nb = 0;
        std::optional<std::size_t> prev_unknown;
        for (std::size_t i = 0; i < m; ++i) {
            if (phi[i] < tol) {
                phi_boundary[t][i] = Boundary::zero;
                continue;
            }
            if (flags[t][i] && prev_unknown && block[*prev_unknown] >= 0 &&
                std::fabs(phi[*prev_unknown] - phi[i]) < tol) {
                block[i] = block[*prev_unknown];
                phi_boundary[t][i] = phi_boundary[t][*prev_unknown] = Boundary::tied;
            } else {
                block[i] = nb++;
            }
            if (flags[t][i]) prev_unknown = i;
        }
        if (layout.phi_fixed(t) || nb < 2) continue;
        const auto g = layout.phi_group(t);
        if (seen_phi[g]) {
            // Same directions as the first trace of the group.
            for (std::size_t s = 0; s < t; ++s) {
                if (layout.phi_group(s) == g) {
                    phi_grad[t] = phi_grad[s];
                    phi_boundary[t] = phi_boundary[s];
                    break;
                }
            }
            continue;
        }
        seen_phi[g] = true;
        std::vector<std::vector<std::size_t>> members(nb);
        for (std::size_t i = 0; i < m; ++i) {
            if (block[i] >= 0) members[block[i]].push_back(i);
        }
        const std::size_t big = static_cast<std::size_t>(block[std::max_element(phi.begin(), phi.end()) - phi.begin()]);
        for (int b = 0; b < nb; ++b) {
            if (static_cast<std::size_t>(b) == big) continue;
            const auto mine = members[b];
            const auto theirs = members[big];
            const double ratio = static_cast<double>(mine.size()) / static_cast<double>(theirs.size());
            const std::size_t d = dirs.size();
            for (auto i : mine) phi_grad[t][i].push_back({d, 1.0});
            for (auto i : theirs) phi_grad[t][i].push_back({d, -ratio});
            dirs.push_back({[&layout, g, nt, mine, theirs, ratio](ModelParameters& p, double h) {
                                for (std::size_t s = 0; s < nt; ++s) {
                                    if (layout.phi_group(s) != g) continue;
                                    for (auto i : mine) p.traces[s].phi[i] += h;
                                    for (auto i : theirs) p.traces[s].phi[i] -= ratio * h;
                                }
                            },
                            phi[mine.front()]});
        }
    }

    const std::size_t nd = dirs.size();
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& tp = P.traces[t];
        const auto& id = ev.traces()[t].id;
        Reported mu{{"mu", id, "", tp.mu(), std::nullopt, layout.rho_fixed(t) && layout.eta_fixed(t)},
                    std::vector<double>(nd, 0.0)};
        Reported sigma{{"sigma", id, "", tp.sigma(), std::nullopt, layout.rho_fixed(t)}, std::vector<double>(nd, 0.0)};
        if (rho_dir[t]) {
            mu.grad[*rho_dir[t]] = tp.eta;
            sigma.grad[*rho_dir[t]] = -0.5 * std::pow(tp.rho, -1.5);
        }
        if (eta_dir[t]) mu.grad[*eta_dir[t]] = tp.rho;
        Reported xi{{"xi", id, "", tp.xi, std::nullopt, layout.xi_fixed(t), xi_boundary[t]}, std::vector<double>(nd, 0.0)};
        if (xi_dir[t]) xi.grad[*xi_dir[t]] = 1.0;
        xi.free = xi_dir[t].has_value();
        mu.free = !mu.est.fixed;
        sigma.free = !sigma.est.fixed;
        reported.push_back(std::move(mu));
        reported.push_back(std::move(sigma));
        reported.push_back(std::move(xi));
        for (std::size_t i = 0; i < tp.phi.size(); ++i) {
            Reported ph{{"phi", id, result.contributors[t][i], tp.phi[i], std::nullopt, layout.phi_fixed(t),
                         phi_boundary[t][i]},
                        std::vector<double>(nd, 0.0)};
            for (const auto& [d, v] : phi_grad[t][i]) ph.grad[d] = v;
            ph.free = !ph.est.fixed && phi_boundary[t][i] != Boundary::zero && !phi_grad[t][i].empty();
            reported.push_back(std::move(ph));
        }
    }

    result.standard_errors_available = false;
    result.gradient_norm = 0.0;
    if (!hessian) {
        result.standard_error_note = "standard errors not requested";
    } else if (nd > 0) {
        std::vector<double> theta(nd);
        for (std::size_t d = 0; d < nd; ++d) theta[d] = dirs[d].scale;
        auto loglik = [&](const std::vector<double>& th) {
            ModelParameters p = P;
            for (std::size_t d = 0; d < nd; ++d) {
                if (th[d] != theta[d]) dirs[d].move(p, th[d] - theta[d]);
            }
            return total_log_likelihood(ev, p, false);
        };
        std::vector<double> grad;
        const auto H = numerical_hessian(loglik, theta, &grad);
        double g2 = 0.0;
        for (double g : grad) g2 += g * g;
        result.gradient_norm = std::sqrt(g2);
        std::vector<std::vector<double>> negH(nd, std::vector<double>(nd));
        bool finite = true;
        for (std::size_t i = 0; i < nd; ++i) {
            for (std::size_t j = 0; j < nd; ++j) {
                negH[i][j] = -H[i][j];
                finite = finite && std::isfinite(negH[i][j]);
            }
        }
        const auto cov = finite ? invert_spd(negH) : std::nullopt;
        if (cov) {
            result.standard_errors_available = true;
            for (auto& r : reported) {
                if (!r.free) continue;
                double var = 0.0;
                for (std::size_t i = 0; i < nd; ++i) {
                    for (std::size_t j = 0; j < nd; ++j) var += r.grad[i] * (*cov)[i][j] * r.grad[j];
                }
                if (var >= 0.0) r.est.se = std::sqrt(var);
            }
            result.standard_error_note.clear();
        } else {
            result.standard_error_note = "observed information not positive definite; standard errors unavailable";
        }
    } else {
        result.standard_error_note = "no free parameters";
    }
    result.estimates.clear();
    for (auto& r : reported) result.estimates.push_back(std::move(r.est));
}

/// Maximizes the likelihood of the specification's evidence. Multistart from
/// dispersed points plus any warm starts; the best optimum is kept.
inline FitResult fit(const FitSpecification& spec) {
    if (!spec.evidence) throw std::invalid_argument("fit: specification has no evidence");
    const Evidence& ev = *spec.evidence;
    if (ev.traces().empty()) throw std::invalid_argument("fit: no traces");
    const detail::ParameterLayout layout(ev, spec.sharing, spec.fixed);

    int evaluations = 0;
    auto objective = [&](const std::vector<double>& x) {
        ++evaluations;
        const double ll = total_log_likelihood(ev, layout.to_params(x));
        return std::isnan(ll) ? std::numeric_limits<double>::infinity() : -ll + layout.box_penalty(x);
    };

    std::vector<std::vector<double>> starts;
    std::mt19937_64 rng(spec.seed);
    const int structured = layout.structured_starts();
    const int count = structured + std::max(spec.multistart, 0);
    for (int k = spec.structured_starts ? 0 : structured; k < count; ++k) {
        starts.push_back(layout.to_internal(layout.start(k, rng)));
    }
    if (starts.empty() && spec.warm_starts.empty()) starts.push_back(layout.to_internal(layout.start(0, rng)));
    for (const auto& w : spec.warm_starts) starts.push_back(layout.to_internal(w));

    FitResult result;
    result.hypothesis = ev.hypothesis().id;
    for (const auto& t : ev.traces()) result.trace_ids.push_back(t.id);
    result.contributors = contributor_names(ev);
    result.data_fingerprint = ev.data_fingerprint();

    MinimizeResult best;
    bool any = false;
    for (const auto& x0 : starts) {
        const auto r = minimize_nelder_mead(objective, x0, spec.optimizer);
        result.iterations += r.iterations;
        ++result.starts;
        if (!any || r.value < best.value) {
            best = r;
            any = true;
        }
    }
    result.converged = best.converged;
    result.evaluations = evaluations;
    result.params = layout.to_params(best.x);
    result.log_likelihood = total_log_likelihood(ev, result.params);
    result.log10_likelihood = result.log_likelihood / std::log(10.0);
    if (!std::isfinite(result.log_likelihood)) {
        throw FitError("fit: hypothesis " + result.hypothesis + " gives the evidence zero probability");
    }
    standard_errors(result, spec, spec.standard_errors);
    return result;
}

/// Carries fitted parameters of one hypothesis over to another on the same
/// traces: fractions are matched by contributor name, the remaining mass goes
/// to unmatched contributors in decreasing order, and unknown fractions are
/// re-sorted. Used to seed fits under a competing hypothesis.
inline ModelParameters transfer_parameters(const FitResult& from, const Evidence& to) {
    ModelParameters p;
    const auto names = contributor_names(to);
    const auto flags = to.unknown_flags();
    for (std::size_t t = 0; t < to.traces().size(); ++t) {
        const auto& id = to.traces()[t].id;
        const auto it = std::find(from.trace_ids.begin(), from.trace_ids.end(), id);
        if (it == from.trace_ids.end()) throw std::invalid_argument("transfer_parameters: trace " + id + " missing");
        const std::size_t s = static_cast<std::size_t>(it - from.trace_ids.begin());
        TraceParameters tp = from.params.traces[s];
        const auto& src_names = from.contributors[s];
        std::vector<double> phi(names[t].size(), -1.0);
        std::vector<bool> used(src_names.size(), false);
        for (std::size_t i = 0; i < names[t].size(); ++i) {
            for (std::size_t j = 0; j < src_names.size(); ++j) {
                if (!used[j] && src_names[j] == names[t][i] && !(flags[t][i] && src_names[j].empty())) {
                    phi[i] = tp.phi[j];
                    used[j] = true;
                }
            }
        }
        std::vector<double> leftover;
        for (std::size_t j = 0; j < src_names.size(); ++j) {
            if (!used[j]) leftover.push_back(tp.phi[j]);
        }
        std::sort(leftover.rbegin(), leftover.rend());
        std::size_t k = 0;
        for (auto& v : phi) {
            if (v < 0.0) v = k < leftover.size() ? leftover[k++] : 0.0;
        }
        double total = 0.0;
        for (double v : phi) total += v;
        if (!(total > 0.0)) std::fill(phi.begin(), phi.end(), 1.0 / static_cast<double>(phi.size()));
        else for (auto& v : phi) v /= total;
        std::vector<double> u;
        for (std::size_t i = 0; i < phi.size(); ++i) {
            if (flags[t][i]) u.push_back(phi[i]);
        }
        std::sort(u.rbegin(), u.rend());
        for (std::size_t i = 0, m = 0; i < phi.size(); ++i) {
            if (flags[t][i]) phi[i] = u[m++];
        }
        tp.phi = std::move(phi);
        p.traces.push_back(std::move(tp));
    }
    return p;
}

/// log10 LR of the two fitted hypotheses, in bans.
inline double weight_of_evidence(const FitResult& prosecution, const FitResult& defence) {
    if (prosecution.data_fingerprint != defence.data_fingerprint) {
        throw std::invalid_argument("weight_of_evidence: fits are based on different evidence");
    }
    return prosecution.log10_likelihood - defence.log10_likelihood;
}

/// -log10 pi_s - WoE, where pi_s is the suspect's match probability over
/// `markers` (every marker of `freqs` when null).
inline double efficiency_loss(double woe, const GenotypeProfile& suspect, const FrequencyTable& freqs,
                              const std::vector<std::string>* markers = nullptr) {
    return -std::log10(match_probability(suspect, freqs, markers)) - woe;
}

/// -log10 of the posterior probability of the suspect's profile (or the
/// top-ranked deconvolution) under the defence hypothesis.
inline double generic_efficiency_loss(double posterior) {
    if (!(posterior > 0.0 && posterior <= 1.0)) {
        throw std::invalid_argument("generic_efficiency_loss: posterior must lie in (0, 1]");
    }
    return -std::log10(posterior);
}

struct ProfilePoint {
    double value = 0.0;
    double log10_likelihood = kNegInf;
    bool converged = false;
    std::string error;
};

struct ProfileCurve {
    std::string parameter;
    std::vector<ProfilePoint> points;
    double max_log10_likelihood = kNegInf;
    double cutoff_bans = 0.0;
    std::optional<double> lower;
    std::optional<double> upper;
};

/// Half the 95% chi-square(1) quantile, in bans.
inline double profile_cutoff_bans() { return 3.841458820694124 / (2.0 * std::log(10.0)); }

/// Maximized log10 likelihood with one parameter held at each grid value.
/// Parameter names: xi, eta, rho:<trace>, sigma:<trace>.
inline ProfileCurve profile_likelihood(const FitSpecification& spec, const std::string& parameter,
                                       const std::vector<double>& grid,
                                       const std::optional<FitResult>& unconstrained = std::nullopt) {
    ProfileCurve curve;
    curve.parameter = parameter;
    curve.cutoff_bans = profile_cutoff_bans();
    const auto colon = parameter.find(':');
    const std::string name = parameter.substr(0, colon);
    const std::string trace = colon == std::string::npos ? "" : parameter.substr(colon + 1);
    if (name != "xi" && name != "eta" && name != "rho" && name != "sigma") {
        throw std::invalid_argument("profile_likelihood: unsupported parameter '" + parameter + "'");
    }
    if ((name == "rho" || name == "sigma") && trace.empty()) {
        throw std::invalid_argument("profile_likelihood: " + name + " needs a trace, e.g. " + name + ":<trace>");
    }
    if (name == "xi" && !spec.sharing.xi && spec.evidence->traces().size() > 1) {
        throw std::invalid_argument("profile_likelihood: xi profile requires shared xi");
    }
    if (name == "eta" && !spec.sharing.eta && spec.evidence->traces().size() > 1) {
        throw std::invalid_argument("profile_likelihood: eta profile requires shared eta");
    }
    std::optional<ModelParameters> previous;
    if (unconstrained) previous = unconstrained->params;
    for (double v : grid) {
        ProfilePoint pt;
        pt.value = v;
        FitSpecification s = spec;
        s.standard_errors = false;
        if (name == "xi") s.fixed.xi = v;
        if (name == "eta") s.fixed.eta = v;
        if (name == "rho") s.fixed.rho[trace] = v;
        if (name == "sigma") s.fixed.sigma[trace] = v;
        if (unconstrained) s.warm_starts.push_back(unconstrained->params);
        if (previous) s.warm_starts.push_back(*previous);
        try {
            const auto r = fit(s);
            pt.log10_likelihood = r.log10_likelihood;
            pt.converged = r.converged;
            previous = r.params;
        } catch (const std::exception& e) {
            pt.error = e.what();
        }
        curve.points.push_back(pt);
    }
    curve.max_log10_likelihood = unconstrained ? unconstrained->log10_likelihood : kNegInf;
    for (const auto& p : curve.points) curve.max_log10_likelihood = std::max(curve.max_log10_likelihood, p.log10_likelihood);
    for (const auto& p : curve.points) {
        if (p.error.empty() && p.log10_likelihood >= curve.max_log10_likelihood - curve.cutoff_bans) {
            if (!curve.lower || p.value < *curve.lower) curve.lower = p.value;
            if (!curve.upper || p.value > *curve.upper) curve.upper = p.value;
        }
    }
    return curve;
}

struct SweepRow {
    std::size_t unknowns = 0;
    double log10_likelihood = kNegInf;
    bool converged = false;
    FitResult fit;
};

/// Adds one unknown contributor, appended to every trace's role list.
inline Hypothesis with_extra_unknown(const Hypothesis& h) {
    Hypothesis out = h;
    std::size_t k = h.unknown.size() + 1;
    auto taken = [&](const std::string& label) {
        return std::find(out.unknown.begin(), out.unknown.end(), label) != out.unknown.end() ||
               std::find(out.known.begin(), out.known.end(), label) != out.known.end();
    };
    while (taken("U" + std::to_string(k))) ++k;
    const std::string label = "U" + std::to_string(k);
    out.unknown.push_back(label);
    for (auto& [trace, roles] : out.trace_roles) roles.push_back(label);
    return out;
}

/// Refits with 0, 1, ... additional unknown contributors up to `max_unknowns`
/// in total. Each fit is warm-started at the previous optimum with the new
/// contributor at fraction zero, so the maximized likelihood cannot drop.
/// After the first fit only the warm start and the random starts are used.
inline std::vector<SweepRow> contributor_sweep(const FrequencyTable& freqs, const std::vector<Trace>& traces,
                                               const std::map<std::string, GenotypeProfile>& profiles,
                                               const Hypothesis& base, const FitSpecification& settings,
                                               std::size_t max_unknowns) {
    if (max_unknowns < base.unknown.size()) {
        throw std::invalid_argument("contributor_sweep: max unknowns below the hypothesis' current count");
    }
    if (!settings.fixed.phi.empty()) throw std::invalid_argument("contributor_sweep: phi cannot be fixed");
    std::vector<SweepRow> rows;
    Hypothesis h = base;
    std::optional<FitResult> previous;
    while (true) {
        FitSpecification spec = settings;
        spec.evidence = std::make_shared<const Evidence>(freqs, traces, profiles, h);
        spec.warm_starts.clear();
        if (previous) {
            // The warm start carries the previous optimum, so the structured
            // starts add little beyond cost.
            spec.structured_starts = false;
            ModelParameters warm = previous->params;
            const auto flags = spec.evidence->unknown_flags();
            for (std::size_t t = 0; t < warm.traces.size(); ++t) {
                while (warm.traces[t].phi.size() < flags[t].size()) warm.traces[t].phi.push_back(0.0);
            }
            spec.warm_starts.push_back(warm);
        }
        SweepRow row;
        row.unknowns = h.unknown.size();
        row.fit = fit(spec);
        row.log10_likelihood = row.fit.log10_likelihood;
        row.converged = row.fit.converged;
        previous = row.fit;
        rows.push_back(std::move(row));
        if (h.unknown.size() >= max_unknowns) break;
        h = with_extra_unknown(h);
    }
    return rows;
}

}  // namespace mixref
