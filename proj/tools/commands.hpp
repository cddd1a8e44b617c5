#pragma once

// Subcommands of the mixref command-line tool. Kept in a header so the test
// suite can drive them in-process.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixref/analysis.hpp"
#include "mixref/case_config.hpp"
#include "mixref/estimation.hpp"
#include "mixref/io.hpp"
#include "mixref/report.hpp"
#include "mixref/simulation.hpp"

namespace mixref::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitLoad = 2;
inline constexpr int kExitConvergence = 3;

/// Failure carrying its exit code and a short machine-readable kind.
class CommandError : public std::runtime_error {
  public:
    CommandError(int code, std::string kind, const std::string& message)
        : std::runtime_error(message), code_(code), kind_(std::move(kind)) {}
    int code() const { return code_; }
    const std::string& kind() const { return kind_; }

  private:
    int code_;
    std::string kind_;
};

struct Options {
    std::string freqs;
    std::string profiles;
    std::vector<std::string> traces;
    std::string hypothesis_file;
    std::string id;
    std::optional<double> threshold;
    std::optional<double> q0;
    std::size_t k = 5;
    std::size_t max_unknowns = 4;
    std::uint64_t seed = 1;
    std::string out;
    std::string truth;
    std::optional<std::string> share;
    bool json = false;
    bool untruncated = false;
    std::string report;
};

/// Everything loaded for one invocation.
struct Case {
    CaseConfig config;
    FrequencyTable freqs;
    std::map<std::string, GenotypeProfile> profiles;
    std::vector<Trace> traces;
    std::vector<std::string> warnings;
    SharingSpec sharing;
};

inline Case load_case(const Options& o, bool need_traces = true) {
    Case c;
    if (o.freqs.empty()) throw LoadError("--freqs is required");
    c.freqs = load_frequencies(o.freqs);
    const double q0 = o.q0 ? *o.q0 : 0.0;
    if (q0 < 0.0 || q0 >= 1.0) throw LoadError("--q0 must lie in [0, 1)");
    if (q0 > 0.0) c.freqs = with_silent(c.freqs, q0);
    if (!o.profiles.empty()) c.profiles = load_profiles(o.profiles);
    if (o.hypothesis_file.empty()) throw LoadError("--hypothesis is required");
    c.config = load_case_config(o.hypothesis_file);
    if (!o.q0 && c.config.q0 && *c.config.q0 > 0.0) c.freqs = with_silent(c.freqs, *c.config.q0);
    if (need_traces) {
        if (o.traces.empty()) throw LoadError("at least one --trace is required");
        for (const auto& path : o.traces) {
            for (auto& t : load_traces(path)) c.traces.push_back(std::move(t));
        }
        const double threshold = o.threshold ? *o.threshold : c.config.default_threshold.value_or(50.0);
        c.warnings = apply_thresholds(c.traces, c.config.thresholds, threshold);
    }
    c.sharing = o.share ? parse_sharing(*o.share) : c.config.sharing.value_or(SharingSpec{});
    return c;
}

inline std::shared_ptr<const Evidence> evidence_for(const Case& c, const std::string& id) {
    return std::make_shared<const Evidence>(c.freqs, c.traces, c.profiles, c.config.hypothesis(id));
}

inline FitSpecification spec_for(const Case& c, const std::string& id, const Options& o) {
    FitSpecification spec;
    spec.evidence = evidence_for(c, id);
    spec.sharing = c.sharing;
    auto it = c.config.fixed.find(id);
    if (it != c.config.fixed.end()) spec.fixed = it->second;
    spec.seed = o.seed;
    return spec;
}

inline void write_report(const Json& report, const Options& o, std::ostream& out) {
    if (!o.out.empty()) {
        std::ofstream f(o.out);
        if (!f) throw CommandError(kExitLoad, "output", "cannot write " + o.out);
        f << report.dump(2) << '\n';
    }
    if (o.json) out << report.dump(2) << '\n';
    else out << render_text(report);
}

inline void require_converged(const FitResult& r) {
    if (!r.converged) {
        throw CommandError(kExitConvergence, "convergence", "fit of hypothesis " + r.hypothesis + " did not converge");
    }
}

inline FitResult fit_checked(const FitSpecification& spec) {
    try {
        return fit(spec);
    } catch (const FitError& e) {
        throw CommandError(kExitConvergence, "convergence", e.what());
    }
}

inline int cmd_fit(const Options& o, std::ostream& out) {
    const auto c = load_case(o);
    const auto id = c.config.resolve(o.id.empty() ? "prosecution" : o.id);
    const auto r = fit_checked(spec_for(c, id, o));
    write_report(fit_json(r), o, out);
    require_converged(r);
    return kExitOk;
}

inline int cmd_woe(const Options& o, std::ostream& out) {
    const auto c = load_case(o);
    const auto hp = c.config.resolve("prosecution");
    const auto hd = c.config.resolve("defence");
    const auto p = fit_checked(spec_for(c, hp, o));
    auto dspec = spec_for(c, hd, o);
    dspec.warm_starts.push_back(transfer_parameters(p, *dspec.evidence));
    const auto d = hd == hp ? p : fit_checked(dspec);
    std::optional<double> bound;
    if (!c.config.suspect.empty()) {
        auto it = c.profiles.find(c.config.suspect);
        if (it == c.profiles.end()) throw LoadError("suspect '" + c.config.suspect + "' has no profile");
        const auto markers = dspec.evidence->marker_names();
        bound = -std::log10(match_probability(it->second, c.freqs, &markers));
    }
    const auto report = woe_json(p, d, c.config.suspect, bound);
    write_report(report, o, out);
    require_converged(p);
    require_converged(d);
    if (bound && !report.at("bound_satisfied").get<bool>()) {
        throw CommandError(kExitConvergence, "convergence",
                           "weight of evidence exceeds the match-probability bound; the defence fit is not at its maximum");
    }
    return kExitOk;
}

/// Parameters for the posterior summaries: a fit under the hypothesis (which
/// reduces to an evaluation when the case fixes every parameter).
inline std::pair<std::shared_ptr<const Evidence>, FitResult> fitted(const Case& c, const std::string& id,
                                                                    const Options& o) {
    auto spec = spec_for(c, id, o);
    spec.standard_errors = false;
    auto r = fit_checked(spec);
    require_converged(r);
    return {spec.evidence, std::move(r)};
}

inline int cmd_deconvolve(const Options& o, std::ostream& out) {
    const auto c = load_case(o);
    const auto id = c.config.resolve(o.id.empty() ? "defence" : o.id);
    const auto [ev, r] = fitted(c, id, o);
    write_report(deconvolution_json(deconvolve(*ev, r.params, o.k), id), o, out);
    return kExitOk;
}

inline int cmd_artefacts(const Options& o, std::ostream& out) {
    const auto c = load_case(o);
    const auto id = c.config.resolve(o.id.empty() ? "defence" : o.id);
    const auto [ev, r] = fitted(c, id, o);
    write_report(artefact_json(artefact_rows(*ev, r.params), id), o, out);
    return kExitOk;
}

inline int cmd_sweep(const Options& o, std::ostream& out) {
    const auto c = load_case(o);
    const auto id = c.config.resolve(o.id.empty() ? "defence" : o.id);
    auto spec = spec_for(c, id, o);
    spec.standard_errors = false;
    spec.fixed.phi.clear();
    std::vector<SweepRow> rows;
    try {
        rows = contributor_sweep(c.freqs, c.traces, c.profiles, c.config.hypothesis(id), spec, o.max_unknowns);
    } catch (const FitError& e) {
        throw CommandError(kExitConvergence, "convergence", e.what());
    }
    write_report(sweep_json(rows), o, out);
    for (const auto& r : rows) require_converged(r.fit);
    return kExitOk;
}

inline int cmd_simulate(const Options& o, std::ostream& out) {
    const auto c = load_case(o, false);
    if (!c.config.simulation) throw LoadError(o.hypothesis_file + ": no simulation block");
    const auto& sim = *c.config.simulation;
    std::vector<GenotypeProfile> contributors;
    for (const auto& id : sim.contributors) {
        auto it = c.profiles.find(id);
        if (it == c.profiles.end()) throw LoadError("simulation contributor '" + id + "' has no profile");
        contributors.push_back(it->second);
    }
    std::mt19937_64 rng(o.seed);
    for (auto& p : draw_profiles(c.freqs, sim.draw, rng, "S")) contributors.push_back(std::move(p));
    const double default_threshold = o.threshold ? *o.threshold : c.config.default_threshold.value_or(50.0);
    std::vector<Trace> traces;
    for (std::size_t t = 0; t < sim.traces.size(); ++t) {
        const auto& st = sim.traces[t];
        SimulationConfig cfg;
        cfg.trace_id = st.id;
        const auto re = params_from_mean_cv(st.mu, st.sigma);
        cfg.params = {re.rho, re.eta, st.xi, st.phi};
        cfg.contributors = contributors;
        cfg.threshold = st.threshold.value_or(default_threshold);
        cfg.seed = o.seed + 1 + t;
        try {
            traces.push_back(simulate_trace(c.freqs, cfg));
        } catch (const std::invalid_argument& e) {
            throw LoadError(std::string("simulation block: ") + e.what());
        }
    }
    if (!o.truth.empty()) {
        std::ofstream f(o.truth);
        if (!f) throw CommandError(kExitLoad, "output", "cannot write " + o.truth);
        write_profiles(f, contributors);
    }
    Json report{{"report", "simulate"}, {"seed", o.seed}};
    Json ids = Json::array();
    for (const auto& t : traces) ids.push_back(t.id);
    report["traces"] = ids;
    Json who = Json::array();
    for (const auto& p : contributors) who.push_back(p.id);
    report["contributors"] = who;
    if (o.out.empty()) {
        write_traces(out, traces);
    } else {
        std::ofstream f(o.out);
        if (!f) throw CommandError(kExitLoad, "output", "cannot write " + o.out);
        write_traces(f, traces);
        out << (o.json ? report.dump(2) + "\n" : render_text(report));
    }
    return kExitOk;
}

inline int cmd_diagnose(const Options& o, std::ostream& out) {
    const auto c = load_case(o);
    const auto id = c.config.resolve(o.id.empty() ? "prosecution" : o.id);
    const auto [ev, r] = fitted(c, id, o);
    const bool truncated = !o.untruncated;
    const auto pit = probability_integral_transform(*ev, r.params, truncated);
    if (pit.empty()) throw CommandError(kExitUsage, "input", "no observed peaks to diagnose");
    std::vector<double> values;
    for (const auto& v : pit) values.push_back(v.pit);
    const auto report = diagnose_json(pit, ks_uniform(values), id, truncated);
    if (!o.out.empty()) {
        std::ofstream f(o.out);
        if (!f) throw CommandError(kExitLoad, "output", "cannot write " + o.out);
        write_pit_csv(f, pit);
    }
    out << (o.json ? report.dump(2) + "\n" : render_text(report));
    return kExitOk;
}

inline int cmd_render(const Options& o, std::ostream& out) {
    auto in = detail::open_input(o.report, "report");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw LoadError(o.report + ": " + e.what());
    }
    out << render_text(j);
    return kExitOk;
}

inline void emit_error(std::ostream& err, const std::string& kind, const std::string& message) {
    err << Json{{"error", message}, {"kind", kind}}.dump() << '\n';
}

/// Parses arguments and runs one subcommand. Errors go to `err` as JSON.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Likelihood-based analysis of DNA mixture traces"};
    app.require_subcommand(1);
    Options o;

    auto case_options = [&o](CLI::App* sub, bool traces = true) {
        sub->add_option("--freqs", o.freqs, "Allele frequency CSV (marker,allele,frequency)");
        sub->add_option("--profiles", o.profiles, "Reference profile CSV (individual,marker,allele1,allele2)");
        if (traces) sub->add_option("--trace", o.traces, "Trace CSV (trace_id,marker,allele,height); repeatable");
        sub->add_option("--hypothesis", o.hypothesis_file, "Case JSON with hypotheses and settings");
        sub->add_option("--threshold", o.threshold, "Detection threshold for traces without their own");
        sub->add_option("--q0", o.q0, "Silent-allele frequency added to every marker");
        sub->add_option("--seed", o.seed, "Random seed");
        sub->add_option("--out", o.out, "Output file");
        sub->add_option("--share", o.share, "Parameters shared across traces: eta,xi[,phi] or none");
        sub->add_flag("--json", o.json, "Print the JSON report instead of a text table");
    };

    auto* fit_cmd = app.add_subcommand("fit", "Maximum-likelihood fit under one hypothesis");
    case_options(fit_cmd);
    fit_cmd->add_option("--id", o.id, "Hypothesis id or role (default: prosecution)");

    auto* woe_cmd = app.add_subcommand("woe", "Weight of evidence of prosecution against defence");
    case_options(woe_cmd);

    auto* dec_cmd = app.add_subcommand("deconvolve", "Most probable profiles of the unknown contributors");
    case_options(dec_cmd);
    dec_cmd->add_option("--id", o.id, "Hypothesis id or role (default: defence)");
    dec_cmd->add_option("--k", o.k, "Number of profiles")->check(CLI::PositiveNumber);

    auto* art_cmd = app.add_subcommand("artefacts", "Stutter and dropout posteriors per allele");
    case_options(art_cmd);
    art_cmd->add_option("--id", o.id, "Hypothesis id or role (default: defence)");

    auto* sweep_cmd = app.add_subcommand("sweep", "Maximized likelihood as unknown contributors are added");
    case_options(sweep_cmd);
    sweep_cmd->add_option("--id", o.id, "Starting hypothesis id or role (default: defence)");
    sweep_cmd->add_option("--k,--max-unknowns", o.max_unknowns, "Largest number of unknown contributors")
        ->check(CLI::Range(0, static_cast<int>(kMaxUnknowns)));

    auto* sim_cmd = app.add_subcommand("simulate", "Simulate traces from the case's simulation block");
    case_options(sim_cmd, false);
    sim_cmd->add_option("--truth", o.truth, "Write the contributors' profiles to this CSV");

    auto* diag_cmd = app.add_subcommand("diagnose", "Probability integral transform and KS test");
    case_options(diag_cmd);
    diag_cmd->add_option("--id", o.id, "Hypothesis id or role (default: prosecution)");
    diag_cmd->add_flag("--untruncated", o.untruncated, "Drop each peak's observed status from the conditioning");

    auto* render_cmd = app.add_subcommand("render", "Render a saved JSON report as text");
    render_cmd->add_option("report", o.report, "Report JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        emit_error(err, "usage", e.what());
        return kExitUsage;
    }

    try {
        if (*fit_cmd) return cmd_fit(o, out);
        if (*woe_cmd) return cmd_woe(o, out);
        if (*dec_cmd) return cmd_deconvolve(o, out);
        if (*art_cmd) return cmd_artefacts(o, out);
        if (*sweep_cmd) return cmd_sweep(o, out);
        if (*sim_cmd) return cmd_simulate(o, out);
        if (*diag_cmd) return cmd_diagnose(o, out);
        if (*render_cmd) return cmd_render(o, out);
    } catch (const CommandError& e) {
        emit_error(err, e.kind(), e.what());
        return e.code();
    } catch (const LoadError& e) {
        emit_error(err, "load", e.what());
        return kExitLoad;
    } catch (const EvidenceError& e) {
        emit_error(err, "load", e.what());
        return kExitLoad;
    } catch (const std::exception& e) {
        emit_error(err, "runtime", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace mixref::cli
