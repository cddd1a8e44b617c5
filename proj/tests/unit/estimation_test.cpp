#include <gtest/gtest.h>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <memory>
#include <random>

#include "mixref/estimation.hpp"
#include "support/random_case.hpp"

using namespace mixref;
using mixref::testing::RandomCaseOptions;
using mixref::testing::make_evidence;
using mixref::testing::random_case;

namespace {

AlleleLabel al(const std::string& s) { return AlleleLabel::parse(s); }

/// Single known heterozygote over several two-allele markers, every allele
/// observed. With xi held at 0 the likelihood is a product of gamma densities
/// with shape rho and scale eta, so the fit must reproduce the gamma MLE.
struct GammaCase {
    FrequencyTable freqs;
    std::vector<Trace> traces;
    std::map<std::string, GenotypeProfile> profiles;
    std::vector<double> heights;
};

GammaCase gamma_case() {
    const std::vector<double> h{812, 1033, 640, 955, 1210, 701, 880, 1104, 530, 990};
    GammaCase g;
    std::vector<MarkerFrequencies> ms;
    Trace tr{"T1", 50.0, {}};
    GenotypeProfile k{"K", {}};
    for (std::size_t m = 0; m < h.size() / 2; ++m) {
        const std::string name = "M" + std::to_string(m + 1);
        ms.push_back({name, {al("11"), al("12")}, {0.4, 0.6}});
        tr.markers[name] = {{al("11"), h[2 * m]}, {al("12"), h[2 * m + 1]}};
        k.markers[name] = {al("11"), al("12")};
    }
    g.freqs = FrequencyTable(ms);
    g.traces = {tr};
    g.profiles = {{"K", k}};
    g.heights = h;
    return g;
}

FitSpecification gamma_spec(const GammaCase& g) {
    FitSpecification spec;
    spec.evidence = std::make_shared<const Evidence>(g.freqs, g.traces, g.profiles, make_hypothesis("H", {"K"}, 0));
    spec.fixed.xi = 0.0;
    return spec;
}

}  // namespace

TEST(Fit, ReproducesGammaMaximumLikelihood) {
    const auto g = gamma_case();
    const auto r = fit(gamma_spec(g));

    const double n = static_cast<double>(g.heights.size());
    double mean = 0.0, mean_log = 0.0;
    for (double x : g.heights) {
        mean += x / n;
        mean_log += std::log(x) / n;
    }
    const double s = std::log(mean) - mean_log;
    const auto f = [s](double k) { return std::log(k) - boost::math::digamma(k) - s; };
    boost::uintmax_t iters = 200;
    const auto bracket = boost::math::tools::bisect(f, 1e-3, 1e6, boost::math::tools::eps_tolerance<double>(50), iters);
    const double rho = 0.5 * (bracket.first + bracket.second);
    const double eta = mean / rho;
    double ll = 0.0;
    for (double x : g.heights) ll += std::log(boost::math::pdf(boost::math::gamma_distribution<double>(rho, eta), x));

    ASSERT_TRUE(r.converged);
    EXPECT_NEAR(r.log_likelihood, ll, 1e-7);
    EXPECT_NEAR(r.params.traces[0].rho, rho, 1e-4 * rho);
    EXPECT_NEAR(r.params.traces[0].eta, eta, 1e-4 * eta);

    // Observed information equals the expected one at the gamma MLE.
    const double i11 = n * boost::math::trigamma(rho), i12 = n / eta, i22 = n * rho / (eta * eta);
    const double det = i11 * i22 - i12 * i12;
    const double c11 = i22 / det, c12 = -i12 / det, c22 = i11 / det;
    const double se_mu = std::sqrt(eta * eta * c11 + 2 * eta * rho * c12 + rho * rho * c22);
    const double ds = -0.5 * std::pow(rho, -1.5);
    const double se_sigma = std::sqrt(ds * ds * c11);
    ASSERT_TRUE(r.standard_errors_available) << r.standard_error_note;
    const auto* mu = r.find("mu", "T1");
    const auto* sigma = r.find("sigma", "T1");
    ASSERT_TRUE(mu && mu->se && sigma && sigma->se);
    EXPECT_NEAR(mu->estimate, rho * eta, 1e-4 * rho * eta);
    EXPECT_NEAR(*mu->se, se_mu, 2e-3 * se_mu);
    EXPECT_NEAR(*sigma->se, se_sigma, 2e-3 * se_sigma);
    EXPECT_TRUE(r.find("xi", "T1")->fixed);
    EXPECT_LT(r.gradient_norm, 1e-2);
}

TEST(Fit, AllFixedEvaluatesDirectly) {
    std::mt19937_64 rng(11);
    int checked = 0;
    for (int i = 0; i < 10; ++i) {
        auto rc = random_case(rng, {3, 4, 1, 2, 2, 2, false, true});
        const auto ev = std::make_shared<const Evidence>(make_evidence(rc));
        FitSpecification spec;
        spec.evidence = ev;
        spec.sharing = {false, false, false};
        spec.fixed.xi = std::nullopt;
        for (std::size_t t = 0; t < rc.traces.size(); ++t) {
            rc.params.traces[t].xi = rc.params.traces[0].xi;
        }
        spec.sharing.xi = true;
        spec.fixed.xi = rc.params.traces[0].xi;
        for (std::size_t t = 0; t < rc.traces.size(); ++t) {
            const auto& id = rc.traces[t].id;
            spec.fixed.sigma[id] = rc.params.traces[t].sigma();
            spec.fixed.mu[id] = rc.params.traces[t].mu();
            spec.fixed.phi[id] = rc.params.traces[t].phi;
        }
        const double expected = total_log_likelihood(*ev, rc.params);
        if (!std::isfinite(expected)) continue;
        const auto r = fit(spec);
        EXPECT_NEAR(r.log_likelihood, expected, 1e-9 * std::fabs(expected));
        for (std::size_t t = 0; t < rc.traces.size(); ++t) {
            EXPECT_NEAR(r.params.traces[t].rho, rc.params.traces[t].rho, 1e-9 * rc.params.traces[t].rho);
            EXPECT_NEAR(r.params.traces[t].eta, rc.params.traces[t].eta, 1e-9 * rc.params.traces[t].eta);
        }
        EXPECT_EQ(r.standard_error_note, "no free parameters");
        ++checked;
    }
    EXPECT_GE(checked, 5);
}

TEST(ParameterLayout, RoundTripsParameters) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        auto rc = random_case(rng, {3, 4, 3, 2, 2, 1, false, true});
        const auto ev = make_evidence(rc);
        const detail::ParameterLayout layout(ev, {false, false, false}, {});
        const auto back = layout.to_params(layout.to_internal(rc.params));
        for (std::size_t t = 0; t < rc.params.traces.size(); ++t) {
            const auto& a = rc.params.traces[t];
            const auto& b = back.traces[t];
            EXPECT_NEAR(b.rho, a.rho, 1e-12 * a.rho);
            EXPECT_NEAR(b.eta, a.eta, 1e-12 * a.eta);
            EXPECT_NEAR(b.xi, a.xi, 1e-12);
            ASSERT_EQ(b.phi.size(), a.phi.size());
            for (std::size_t k = 0; k < a.phi.size(); ++k) EXPECT_NEAR(b.phi[k], a.phi[k], 1e-12);
        }
        // Any coordinate vector maps to valid parameters.
        std::vector<double> x(layout.free_count());
        for (auto& v : x) v = std::uniform_real_distribution<double>(-50, 50)(rng);
        EXPECT_NO_THROW(validate_parameters(layout.to_params(x), ev.unknown_flags()));
    }
}

TEST(FixedParameters, Validation) {
    const auto g = gamma_case();
    auto spec = gamma_spec(g);
    spec.fixed.mu["T1"] = 900.0;
    EXPECT_THROW(fit(spec), std::invalid_argument);
    spec = gamma_spec(g);
    spec.fixed.rho["nope"] = 3.0;
    EXPECT_THROW(fit(spec), std::invalid_argument);
    spec = gamma_spec(g);
    spec.fixed.phi["T1"] = {0.5, 0.5};
    EXPECT_THROW(fit(spec), std::invalid_argument);
    spec = gamma_spec(g);
    spec.fixed.eta = 40.0;
    spec.fixed.mu["T1"] = 900.0;
    const auto r = fit(spec);
    EXPECT_NEAR(r.params.traces[0].rho, 900.0 / 40.0, 1e-12);
    EXPECT_NEAR(r.params.traces[0].eta, 40.0, 1e-12);
}

TEST(Fit, InvariantToContributorOrder) {
    std::mt19937_64 rng(23);
    int checked = 0;
    while (checked < 4) {
        auto rc = random_case(rng, {3, 4, 1, 2, 1, 2, false, false});
        if (rc.hypothesis.known.size() < 2) continue;
        auto swapped = rc.hypothesis;
        std::swap(swapped.known[0], swapped.known[1]);
        FitSpecification a, b;
        a.evidence = std::make_shared<const Evidence>(make_evidence(rc));
        b.evidence = std::make_shared<const Evidence>(rc.freqs, rc.traces, rc.profiles, swapped);
        a.standard_errors = b.standard_errors = false;
        const double l0 = total_log_likelihood(*a.evidence, rc.params);
        if (!std::isfinite(l0)) continue;
        const auto ra = fit(a);
        const auto rb = fit(b);
        EXPECT_NEAR(ra.log_likelihood, rb.log_likelihood, 1e-5 * std::fabs(ra.log_likelihood));
        ++checked;
    }
}

TEST(WeightOfEvidence, RequiresSameData) {
    FitResult p, d;
    p.log10_likelihood = -10.0;
    d.log10_likelihood = -14.5;
    p.data_fingerprint = d.data_fingerprint = 7;
    EXPECT_DOUBLE_EQ(weight_of_evidence(p, d), 4.5);
    d.data_fingerprint = 8;
    EXPECT_THROW(weight_of_evidence(p, d), std::invalid_argument);
}

TEST(EfficiencyLoss, Examples) {
    const FrequencyTable t({MarkerFrequencies{"A", {al("1"), al("2")}, {0.1, 0.9}}});
    GenotypeProfile s{"S", {{"A", {al("1"), al("1")}}}};
    EXPECT_NEAR(efficiency_loss(1.5, s, t), 0.5, 1e-12);
    EXPECT_NEAR(efficiency_loss(2.0, s, t), 0.0, 1e-12);
    EXPECT_NEAR(generic_efficiency_loss(0.5), std::log10(2.0), 1e-15);
    EXPECT_EQ(generic_efficiency_loss(1.0), 0.0);
    EXPECT_THROW(generic_efficiency_loss(0.0), std::invalid_argument);
    EXPECT_THROW(generic_efficiency_loss(1.5), std::invalid_argument);
}

TEST(ProfileLikelihood, PeaksAtTheEstimate) {
    const auto g = gamma_case();
    const auto spec = gamma_spec(g);
    const auto r = fit(spec);
    const double s = r.params.traces[0].sigma();
    std::vector<double> grid;
    for (int i = -6; i <= 6; ++i) grid.push_back(s * (1.0 + 0.1 * i));
    const auto curve = profile_likelihood(spec, "sigma:T1", grid, r);
    ASSERT_EQ(curve.points.size(), grid.size());
    for (const auto& p : curve.points) {
        EXPECT_TRUE(p.error.empty());
        EXPECT_LE(p.log10_likelihood, r.log10_likelihood + 1e-8);
    }
    EXPECT_NEAR(curve.points[6].log10_likelihood, r.log10_likelihood, 1e-7);
    ASSERT_TRUE(curve.lower && curve.upper);
    EXPECT_LE(*curve.lower, s);
    EXPECT_GE(*curve.upper, s);
    EXPECT_NEAR(curve.cutoff_bans, 0.834, 5e-4);
    EXPECT_THROW(profile_likelihood(spec, "phi", grid), std::invalid_argument);
    EXPECT_THROW(profile_likelihood(spec, "rho", grid), std::invalid_argument);
}

TEST(ContributorSweep, LikelihoodNeverDecreases) {
    std::mt19937_64 rng(31);
    int checked = 0;
    for (int i = 0; i < 6 && checked < 3; ++i) {
        auto rc = random_case(rng, {3, 4, 1, 1, 1, 1, false, false});
        const std::size_t base = rc.hypothesis.unknown.size();
        FitSpecification settings;
        settings.standard_errors = false;
        settings.multistart = 2;
        std::vector<SweepRow> rows;
        try {
            rows = contributor_sweep(rc.freqs, rc.traces, rc.profiles, rc.hypothesis, settings, base + 1);
        } catch (const FitError&) {
            continue;  // the base hypothesis cannot explain the peaks
        }
        ASSERT_EQ(rows.size(), 2u);
        for (std::size_t k = 1; k < rows.size(); ++k) {
            EXPECT_EQ(rows[k].unknowns, base + k);
            EXPECT_GE(rows[k].log10_likelihood, rows[k - 1].log10_likelihood - 1e-6);
        }
        ++checked;
    }
    EXPECT_GE(checked, 2);
}

TEST(TransferParameters, MatchesByNameAndSortsUnknowns) {
    FitResult from;
    from.trace_ids = {"T1"};
    from.contributors = {{"K1", "K2", "U1"}};
    from.params.traces.push_back({10.0, 20.0, 0.05, {0.2, 0.5, 0.3}});
    GenotypeProfile k1{"K1", {}};
    const FrequencyTable t({MarkerFrequencies{"A", {al("1"), al("2")}, {0.5, 0.5}}});
    Trace tr{"T1", 50.0, {{"A", {{al("1"), 500.0}}}}};
    k1.markers["A"] = {al("1"), al("1")};
    const Evidence to(t, {tr}, {{"K1", k1}}, make_hypothesis("D", {"K1"}, 2));
    const auto p = transfer_parameters(from, to);
    ASSERT_EQ(p.traces[0].phi.size(), 3u);
    EXPECT_NEAR(p.traces[0].phi[0], 0.2, 1e-15);
    EXPECT_NEAR(p.traces[0].phi[1], 0.5, 1e-15);
    EXPECT_NEAR(p.traces[0].phi[2], 0.3, 1e-15);
}
