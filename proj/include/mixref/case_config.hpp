#pragma once

// Case description in JSON: hypotheses, which of them are prosecution and
// defence, the suspect, thresholds, sharing, fixed parameters and an optional
// simulation block.

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixref/estimation.hpp"
#include "mixref/evidence.hpp"
#include "mixref/io.hpp"

namespace mixref {

struct SimulatedTrace {
    std::string id;
    double mu = 1000.0;
    double sigma = 0.2;
    double xi = 0.08;
    std::vector<double> phi;
    std::optional<double> threshold;
};

struct SimulationBlock {
    std::vector<std::string> contributors;  // profile ids, in phi order
    std::size_t draw = 0;                   // extra contributors drawn under HWE
    std::vector<SimulatedTrace> traces;
};

struct CaseConfig {
    std::map<std::string, Hypothesis> hypotheses;
    std::vector<std::string> order;  // hypothesis ids as listed
    std::string prosecution;
    std::string defence;
    std::string suspect;
    std::map<std::string, double> thresholds;
    std::optional<double> default_threshold;
    std::optional<SharingSpec> sharing;
    std::optional<double> q0;
    std::map<std::string, FixedParameters> fixed;  // by hypothesis id
    std::optional<SimulationBlock> simulation;

    const Hypothesis& hypothesis(const std::string& id) const {
        auto it = hypotheses.find(id);
        if (it == hypotheses.end()) throw LoadError("hypothesis '" + id + "' is not defined");
        return it->second;
    }

    /// A hypothesis id, or the role names "prosecution" / "defence".
    std::string resolve(const std::string& name) const {
        if (name == "prosecution" || name == "defence") {
            const auto& id = name == "prosecution" ? prosecution : defence;
            if (id.empty()) throw LoadError("case configuration names no " + name + " hypothesis");
            return id;
        }
        hypothesis(name);
        return name;
    }
};

/// Parses "eta,xi[,phi]" (or "none") into a sharing specification.
inline SharingSpec parse_sharing(const std::string& text) {
    SharingSpec s{false, false, false};
    if (text == "none" || text.empty()) return s;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto item = detail::trim(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (item == "eta") s.eta = true;
        else if (item == "xi") s.xi = true;
        else if (item == "phi") s.phi = true;
        else throw std::invalid_argument("unknown shared parameter '" + item + "' (expected eta, xi or phi)");
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return s;
}

namespace detail {

inline FixedParameters parse_fixed(const nlohmann::json& j, const std::string& where) {
    FixedParameters f;
    for (const auto& [key, value] : j.items()) {
        if (key == "eta") f.eta = value.get<double>();
        else if (key == "xi") f.xi = value.get<double>();
        else if (key == "rho") f.rho = value.get<std::map<std::string, double>>();
        else if (key == "mu") f.mu = value.get<std::map<std::string, double>>();
        else if (key == "sigma") f.sigma = value.get<std::map<std::string, double>>();
        else if (key == "phi") f.phi = value.get<std::map<std::string, std::vector<double>>>();
        else throw LoadError(where + ": unknown fixed parameter '" + key + "'");
    }
    return f;
}

}  // namespace detail

inline CaseConfig parse_case_config(const nlohmann::json& j, const std::string& source = "case") {
    CaseConfig c;
    try {
        if (!j.is_object()) throw LoadError(source + ": expected a JSON object");
        for (const auto& h : j.value("hypotheses", nlohmann::json::array())) {
            Hypothesis hyp;
            hyp.id = h.at("id").get<std::string>();
            hyp.known = h.value("known", std::vector<std::string>{});
            const int unknowns = h.value("unknowns", 0);
            if (unknowns < 0) throw LoadError(source + ": hypothesis " + hyp.id + " has a negative unknown count");
            hyp = make_hypothesis(hyp.id, hyp.known, unknowns);
            hyp.trace_roles = h.value("traces", std::map<std::string, std::vector<std::string>>{});
            if (c.hypotheses.count(hyp.id)) throw LoadError(source + ": hypothesis '" + hyp.id + "' defined twice");
            c.order.push_back(hyp.id);
            c.hypotheses[hyp.id] = std::move(hyp);
        }
        c.prosecution = j.value("prosecution", "");
        c.defence = j.value("defence", "");
        c.suspect = j.value("suspect", "");
        for (const auto& role : {c.prosecution, c.defence}) {
            if (!role.empty() && !c.hypotheses.count(role)) {
                throw LoadError(source + ": hypothesis '" + role + "' is not defined");
            }
        }
        if (j.contains("thresholds")) {
            for (const auto& [k, v] : j.at("thresholds").items()) {
                if (k == "default") c.default_threshold = v.get<double>();
                else c.thresholds[k] = v.get<double>();
            }
        }
        if (j.contains("share")) {
            const auto& s = j.at("share");
            std::string text;
            for (const auto& item : s) text += (text.empty() ? "" : ",") + item.get<std::string>();
            c.sharing = parse_sharing(text.empty() ? "none" : text);
        }
        if (j.contains("q0")) c.q0 = j.at("q0").get<double>();
        if (j.contains("fixed")) {
            for (const auto& [id, block] : j.at("fixed").items()) {
                if (!c.hypotheses.count(id)) throw LoadError(source + ": fixed parameters for undefined hypothesis '" + id + "'");
                c.fixed[id] = detail::parse_fixed(block, source + ": fixed." + id);
            }
        }
        if (j.contains("simulation")) {
            const auto& s = j.at("simulation");
            SimulationBlock b;
            b.contributors = s.value("contributors", std::vector<std::string>{});
            b.draw = s.value("draw", std::size_t{0});
            for (const auto& t : s.at("traces")) {
                SimulatedTrace st;
                st.id = t.at("id").get<std::string>();
                st.mu = t.value("mu", st.mu);
                st.sigma = t.value("sigma", st.sigma);
                st.xi = t.value("xi", st.xi);
                st.phi = t.at("phi").get<std::vector<double>>();
                if (t.contains("threshold")) st.threshold = t.at("threshold").get<double>();
                b.traces.push_back(std::move(st));
            }
            c.simulation = std::move(b);
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(source + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw LoadError(source + ": " + e.what());
    }
    return c;
}

inline CaseConfig load_case_config(const std::string& path) {
    auto in = detail::open_input(path, "hypothesis file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path + ": " + e.what());
    }
    return parse_case_config(j, path);
}

}  // namespace mixref
