#pragma once

// JSON reports for every subcommand and plain-text tables rendered from them.
// Text is produced from the JSON alone, so a saved report renders identically
// after being read back.

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixref/analysis.hpp"
#include "mixref/estimation.hpp"
#include "mixref/simulation.hpp"

namespace mixref {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline std::string fixed_format(double x, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
    std::string s = buf;
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);  // no "-0.000"
    return s;
}

}  // namespace detail

inline std::string format_probability(double p) { return detail::fixed_format(p, 3); }
inline std::string format_bans(double b) { return std::isfinite(b) ? detail::fixed_format(b, 1) : (b > 0 ? "inf" : "-inf"); }

/// Three significant figures without switching to exponent notation for
/// ordinary magnitudes.
inline std::string format_estimate(double x) {
    if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
    if (x == 0.0) return "0";
    const int mag = static_cast<int>(std::floor(std::log10(std::fabs(x))));
    if (mag < -4 || mag > 8) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2e", x);
        return buf;
    }
    const double scale = std::pow(10.0, 2 - mag);
    const double rounded = std::round(x * scale) / scale;
    const int rmag = static_cast<int>(std::floor(std::log10(std::fabs(rounded))));
    return detail::fixed_format(rounded, std::max(0, 2 - rmag));
}

// --- report builders --------------------------------------------------------

inline Json fit_json(const FitResult& r) {
    Json j;
    j["report"] = "fit";
    j["hypothesis"] = r.hypothesis;
    j["traces"] = r.trace_ids;
    j["contributors"] = r.contributors;
    j["log_likelihood"] = detail::number_or_null(r.log_likelihood);
    j["log10_likelihood"] = detail::number_or_null(r.log10_likelihood);
    j["converged"] = r.converged;
    j["starts"] = r.starts;
    j["iterations"] = r.iterations;
    j["evaluations"] = r.evaluations;
    j["gradient_norm"] = r.gradient_norm;
    j["standard_errors_available"] = r.standard_errors_available;
    j["standard_error_note"] = r.standard_error_note;
    Json params = Json::array();
    for (std::size_t t = 0; t < r.params.traces.size(); ++t) {
        const auto& tp = r.params.traces[t];
        params.push_back({{"trace", r.trace_ids[t]}, {"rho", tp.rho}, {"eta", tp.eta}, {"xi", tp.xi}, {"phi", tp.phi}});
    }
    j["parameters"] = params;
    Json est = Json::array();
    for (const auto& e : r.estimates) {
        Json row{{"parameter", e.name}, {"trace", e.trace}};
        if (!e.contributor.empty()) row["contributor"] = e.contributor;
        row["estimate"] = e.estimate;
        row["se"] = e.se ? Json(*e.se) : Json(nullptr);
        row["fixed"] = e.fixed;
        row["boundary"] = to_string(e.boundary);
        est.push_back(row);
    }
    j["estimates"] = est;
    return j;
}

inline Json woe_json(const FitResult& prosecution, const FitResult& defence, const std::string& suspect,
                     std::optional<double> match_log10) {
    Json j;
    j["report"] = "woe";
    j["prosecution"] = fit_json(prosecution);
    j["defence"] = fit_json(defence);
    const double woe = weight_of_evidence(prosecution, defence);
    j["woe_bans"] = detail::number_or_null(woe);
    j["suspect"] = suspect;
    if (match_log10) {
        j["bound_bans"] = *match_log10;
        j["efficiency_loss_bans"] = *match_log10 - woe;
        j["bound_satisfied"] = woe <= *match_log10 + 1e-9;
    }
    return j;
}

inline Json deconvolution_json(const Deconvolution& d, const std::string& hypothesis) {
    Json j;
    j["report"] = "deconvolve";
    j["hypothesis"] = hypothesis;
    j["markers"] = d.markers;
    j["unknowns"] = d.unknowns;
    Json rows = Json::array();
    for (std::size_t r = 0; r < d.probabilities.size(); ++r) {
        Json profile = Json::object();
        for (std::size_t u = 0; u < d.unknowns.size(); ++u) {
            Json per_marker = Json::object();
            for (std::size_t m = 0; m < d.markers.size(); ++m) {
                const auto& g = d.genotypes[r][m][u];
                per_marker[d.markers[m]] = {g.first.text(), g.second.text()};
            }
            profile[d.unknowns[u]] = per_marker;
        }
        rows.push_back({{"rank", r + 1}, {"probability", d.probabilities[r]}, {"profile", profile}});
    }
    j["profiles"] = rows;
    return j;
}

inline Json artefact_json(const std::vector<ArtefactRow>& rows, const std::string& hypothesis) {
    Json j;
    j["report"] = "artefacts";
    j["hypothesis"] = hypothesis;
    Json out = Json::array();
    for (const auto& r : rows) {
        out.push_back({{"trace", r.trace},
                       {"marker", r.marker},
                       {"allele", r.allele},
                       {"height", r.height},
                       {"p_stutter", r.stutter ? Json(*r.stutter) : Json(nullptr)},
                       {"p_dropout", r.dropout ? Json(*r.dropout) : Json(nullptr)}});
    }
    j["rows"] = out;
    return j;
}

inline Json sweep_json(const std::vector<SweepRow>& rows) {
    Json j;
    j["report"] = "sweep";
    Json out = Json::array();
    for (const auto& r : rows) {
        out.push_back({{"unknowns", r.unknowns},
                       {"hypothesis", r.fit.hypothesis},
                       {"log10_likelihood", detail::number_or_null(r.log10_likelihood)},
                       {"converged", r.converged}});
    }
    j["rows"] = out;
    return j;
}

inline Json diagnose_json(const std::vector<PitValue>& pit, const KsResult& ks, const std::string& hypothesis,
                          bool truncated) {
    Json j;
    j["report"] = "diagnose";
    j["hypothesis"] = hypothesis;
    j["truncated"] = truncated;
    j["peaks"] = ks.n;
    j["ks_statistic"] = ks.statistic;
    j["ks_p_value"] = ks.p_value;
    Json out = Json::array();
    for (const auto& v : pit) {
        out.push_back({{"trace", v.trace}, {"marker", v.marker}, {"allele", v.allele}, {"height", v.height}, {"pit", v.pit}});
    }
    j["pit"] = out;
    return j;
}

// --- text rendering ---------------------------------------------------------

namespace detail {

/// Left-aligned first column, right-aligned others.
inline std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c) os << "  ";
            os << (c == 0 ? std::left : std::right) << std::setw(static_cast<int>(width[c])) << r[c];
        }
        os << '\n';
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows) line(r);
    return os.str();
}

inline std::string bans_or_dash(const Json& v) { return v.is_null() ? "-inf" : format_bans(v.get<double>()); }
inline std::string prob_or_dash(const Json& v) { return v.is_null() ? "-" : format_probability(v.get<double>()); }

inline std::string render_fit(const Json& j) {
    std::ostringstream os;
    os << "Hypothesis " << j.at("hypothesis").get<std::string>() << ": log10 L = " << bans_or_dash(j.at("log10_likelihood"))
       << (j.at("converged").get<bool>() ? "" : " (not converged)") << '\n';
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : j.at("estimates")) {
        std::string name = e.at("parameter").get<std::string>();
        if (e.contains("contributor")) name += "[" + e.at("contributor").get<std::string>() + "]";
        const std::string boundary = e.at("boundary").get<std::string>();
        std::string se = e.at("fixed").get<bool>() ? "fixed" : e.at("se").is_null() ? "-" : format_estimate(e.at("se").get<double>());
        // At the zero boundary the estimate is optimizer noise; print it as 0.
        const std::string est = boundary == "zero" ? "0" : format_estimate(e.at("estimate").get<double>());
        rows.push_back({name, e.at("trace").get<std::string>(), est, se,
                        boundary == "none" ? "" : boundary});
    }
    os << table({"Parameter", "Trace", "Est.", "SE", "Note"}, rows);
    const auto note = j.at("standard_error_note").get<std::string>();
    if (!note.empty()) os << "Note: " << note << '\n';
    return os.str();
}

inline std::string render_woe(const Json& j) {
    std::ostringstream os;
    os << render_fit(j.at("prosecution")) << '\n' << render_fit(j.at("defence")) << '\n';
    std::vector<std::vector<std::string>> rows{{"WoE (bans)", bans_or_dash(j.at("woe_bans"))}};
    if (j.contains("bound_bans")) {
        rows.push_back({"-log10 match probability of " + j.at("suspect").get<std::string>(),
                        format_bans(j.at("bound_bans").get<double>())});
        rows.push_back({"Efficiency loss (bans)", format_bans(j.at("efficiency_loss_bans").get<double>())});
    }
    os << table({"Quantity", "Value"}, rows);
    return os.str();
}

inline std::string render_deconvolution(const Json& j) {
    std::ostringstream os;
    os << "Hypothesis " << j.at("hypothesis").get<std::string>() << ": most probable unknown profiles\n";
    std::vector<std::string> header{"Rank"};
    const auto markers = j.at("markers").get<std::vector<std::string>>();
    const auto unknowns = j.at("unknowns").get<std::vector<std::string>>();
    for (const auto& u : unknowns) {
        for (const auto& m : markers) header.push_back(unknowns.size() > 1 ? u + ":" + m : m);
    }
    header.push_back("Probability");
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : j.at("profiles")) {
        std::vector<std::string> r{std::to_string(p.at("rank").get<int>())};
        for (const auto& u : unknowns) {
            for (const auto& m : markers) {
                const auto g = p.at("profile").at(u).at(m).get<std::vector<std::string>>();
                r.push_back(g[0] + "/" + g[1]);
            }
        }
        r.push_back(format_probability(p.at("probability").get<double>()));
        rows.push_back(std::move(r));
    }
    os << table(header, rows);
    return os.str();
}

inline std::string render_artefacts(const Json& j) {
    std::ostringstream os;
    os << "Hypothesis " << j.at("hypothesis").get<std::string>() << ": stutter and dropout posteriors\n";
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : j.at("rows")) {
        rows.push_back({r.at("trace").get<std::string>(), r.at("marker").get<std::string>(),
                        r.at("allele").get<std::string>(), detail::fixed_format(r.at("height").get<double>(), 0),
                        prob_or_dash(r.at("p_stutter")), prob_or_dash(r.at("p_dropout"))});
    }
    os << table({"Trace", "Marker", "Allele", "z", "P(stutter|z)", "P(dropout|z)"}, rows);
    return os.str();
}

inline std::string render_sweep(const Json& j) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : j.at("rows")) {
        rows.push_back({std::to_string(r.at("unknowns").get<int>()), bans_or_dash(r.at("log10_likelihood")),
                        r.at("converged").get<bool>() ? "yes" : "no"});
    }
    return table({"Unknowns", "log10 L", "Converged"}, rows);
}

inline std::string render_diagnose(const Json& j) {
    std::ostringstream os;
    os << "Hypothesis " << j.at("hypothesis").get<std::string>() << ": probability integral transform ("
       << (j.at("truncated").get<bool>() ? "truncated" : "untruncated") << ")\n";
    os << table({"Quantity", "Value"},
                {{"Observed peaks", std::to_string(j.at("peaks").get<int>())},
                 {"KS statistic", format_probability(j.at("ks_statistic").get<double>())},
                 {"KS p-value", format_probability(j.at("ks_p_value").get<double>())}});
    return os.str();
}

}  // namespace detail

/// Plain-text rendering of any report produced above.
inline std::string render_text(const Json& j) {
    const auto kind = j.at("report").get<std::string>();
    if (kind == "fit") return detail::render_fit(j);
    if (kind == "woe") return detail::render_woe(j);
    if (kind == "deconvolve") return detail::render_deconvolution(j);
    if (kind == "artefacts") return detail::render_artefacts(j);
    if (kind == "sweep") return detail::render_sweep(j);
    if (kind == "diagnose") return detail::render_diagnose(j);
    if (kind == "simulate") {
        std::ostringstream os;
        os << "Simulated " << j.at("traces").size() << " trace(s) with seed " << j.at("seed").get<std::uint64_t>() << '\n';
        return os.str();
    }
    throw std::invalid_argument("render_text: unknown report kind '" + kind + "'");
}

/// PIT values as CSV (peak id, pit) for external plotting.
inline void write_pit_csv(std::ostream& out, const std::vector<PitValue>& pit) {
    out << "peak_id,trace,marker,allele,height,pit\n";
    const auto precision = out.precision(10);
    for (const auto& v : pit) {
        out << v.trace << ':' << v.marker << ':' << v.allele << ',' << v.trace << ',' << v.marker << ',' << v.allele
            << ',' << v.height << ',' << v.pit << '\n';
    }
    out.precision(precision);
}

}  // namespace mixref
