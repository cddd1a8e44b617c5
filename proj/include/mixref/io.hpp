#pragma once

// CSV ingestion of frequency tables, reference profiles and traces, and the
// trace CSV writer used by the simulator.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixref/evidence.hpp"
#include "mixref/genotype_model.hpp"

namespace mixref {

class LoadError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Splits one CSV record; double quotes protect commas and "" is a literal quote.
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

/// Rows of a headed CSV file as column-name -> value maps.
class CsvTable {
  public:
    CsvTable(std::istream& in, const std::string& source, const std::vector<std::string>& required)
        : source_(source) {
        std::string line;
        while (std::getline(in, line) && trim(line).empty()) ++line_no_;
        ++line_no_;
        if (trim(line).empty()) throw LoadError(source + ": missing header row");
        header_ = split_csv(line);
        for (auto& h : header_) std::transform(h.begin(), h.end(), h.begin(), ::tolower);
        for (const auto& r : required) {
            if (std::find(header_.begin(), header_.end(), r) == header_.end()) {
                throw LoadError(source + ": missing column '" + r + "'");
            }
        }
        while (std::getline(in, line)) {
            ++line_no_;
            if (trim(line).empty()) continue;
            auto cells = split_csv(line);
            if (cells.size() != header_.size()) {
                throw LoadError(source + ":" + std::to_string(line_no_) + ": expected " +
                                std::to_string(header_.size()) + " fields, found " + std::to_string(cells.size()));
            }
            std::map<std::string, std::string> row;
            for (std::size_t i = 0; i < cells.size(); ++i) row[header_[i]] = cells[i];
            rows_.push_back({line_no_, std::move(row)});
        }
    }

    struct Row {
        std::size_t line;
        std::map<std::string, std::string> cells;
    };

    const std::vector<Row>& rows() const { return rows_; }

    double number(const Row& r, const std::string& col) const {
        const auto& text = r.cells.at(col);
        try {
            std::size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
            return v;
        } catch (const std::exception&) {
            throw LoadError(where(r) + ": column '" + col + "' is not a number: '" + text + "'");
        }
    }

    std::string where(const Row& r) const { return source_ + ":" + std::to_string(r.line); }

  private:
    std::string source_;
    std::vector<std::string> header_;
    std::vector<Row> rows_;
    std::size_t line_no_ = 0;
};

inline std::ifstream open_input(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path)) throw LoadError(what + " not found: " + path);
    std::ifstream in(path);
    if (!in) throw LoadError(what + " could not be opened: " + path);
    return in;
}

inline AlleleLabel parse_allele(const std::string& text, const std::string& where) {
    if (text.empty()) throw LoadError(where + ": empty allele label");
    return text == "silent" ? AlleleLabel::silent() : AlleleLabel::parse(text);
}

}  // namespace detail

/// Frequency CSV with columns marker, allele, frequency.
inline FrequencyTable read_frequencies(std::istream& in, const std::string& source = "frequencies") {
    detail::CsvTable csv(in, source, {"marker", "allele", "frequency"});
    std::vector<MarkerFrequencies> markers;
    for (const auto& row : csv.rows()) {
        const auto& name = row.cells.at("marker");
        auto it = std::find_if(markers.begin(), markers.end(), [&](const auto& m) { return m.marker == name; });
        if (it == markers.end()) {
            markers.push_back({name, {}, {}});
            it = markers.end() - 1;
        }
        it->alleles.push_back(detail::parse_allele(row.cells.at("allele"), csv.where(row)));
        it->freqs.push_back(csv.number(row, "frequency"));
    }
    if (markers.empty()) throw LoadError(source + ": no frequency rows");
    try {
        return FrequencyTable(std::move(markers));
    } catch (const std::invalid_argument& e) {
        throw LoadError(source + ": " + e.what());
    }
}

inline FrequencyTable load_frequencies(const std::string& path) {
    auto in = detail::open_input(path, "frequency table");
    return read_frequencies(in, path);
}

/// Profile CSV with columns individual, marker, allele1, allele2.
inline std::map<std::string, GenotypeProfile> read_profiles(std::istream& in, const std::string& source = "profiles") {
    detail::CsvTable csv(in, source, {"individual", "marker", "allele1", "allele2"});
    std::map<std::string, GenotypeProfile> out;
    for (const auto& row : csv.rows()) {
        const auto& id = row.cells.at("individual");
        auto& p = out[id];
        p.id = id;
        const auto& marker = row.cells.at("marker");
        if (p.markers.count(marker)) throw LoadError(csv.where(row) + ": " + id + " typed twice on " + marker);
        p.markers[marker] = {detail::parse_allele(row.cells.at("allele1"), csv.where(row)),
                             detail::parse_allele(row.cells.at("allele2"), csv.where(row))};
    }
    return out;
}

inline std::map<std::string, GenotypeProfile> load_profiles(const std::string& path) {
    auto in = detail::open_input(path, "profile table");
    return read_profiles(in, path);
}

/// Trace CSV with columns trace_id, marker, allele, height. Rows of one file
/// may belong to several traces; order of first appearance is kept. A marker
/// listed with no peaks can be declared by a row with an empty allele.
inline std::vector<Trace> read_traces(std::istream& in, const std::string& source = "traces") {
    detail::CsvTable csv(in, source, {"trace_id", "marker", "allele", "height"});
    std::vector<Trace> out;
    for (const auto& row : csv.rows()) {
        const auto& id = row.cells.at("trace_id");
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& t) { return t.id == id; });
        if (it == out.end()) {
            out.push_back({id, 50.0, {}});
            it = out.end() - 1;
        }
        auto& peaks = it->markers[row.cells.at("marker")];
        if (row.cells.at("allele").empty()) continue;
        const double h = csv.number(row, "height");
        if (h < 0.0) throw LoadError(csv.where(row) + ": negative peak height");
        peaks.push_back({detail::parse_allele(row.cells.at("allele"), csv.where(row)), h});
    }
    return out;
}

inline std::vector<Trace> load_traces(const std::string& path) {
    auto in = detail::open_input(path, "trace file");
    return read_traces(in, path);
}

/// Sets each trace's threshold and zeroes heights strictly between 0 and C.
/// Returns one warning per coerced peak.
inline std::vector<std::string> apply_thresholds(std::vector<Trace>& traces,
                                                 const std::map<std::string, double>& thresholds,
                                                 double default_threshold) {
    std::vector<std::string> warnings;
    for (auto& t : traces) {
        auto it = thresholds.find(t.id);
        t.threshold = it == thresholds.end() ? default_threshold : it->second;
        if (!(t.threshold > 0.0)) throw LoadError("trace " + t.id + ": threshold must be positive");
        for (auto& [marker, peaks] : t.markers) {
            for (auto& p : peaks) {
                if (p.height > 0.0 && p.height < t.threshold) {
                    std::ostringstream os;
                    os << "trace " << t.id << ", marker " << marker << ", allele " << p.allele.text() << ": height "
                       << p.height << " below threshold " << t.threshold << " treated as dropout";
                    warnings.push_back(os.str());
                    p.height = 0.0;
                }
            }
        }
    }
    return warnings;
}

/// Writes traces in the ingestion schema; zero heights are written as 0.
inline void write_traces(std::ostream& out, const std::vector<Trace>& traces) {
    out << "trace_id,marker,allele,height\n";
    const auto precision = out.precision(10);
    for (const auto& t : traces) {
        for (const auto& [marker, peaks] : t.markers) {
            if (peaks.empty()) out << t.id << ',' << marker << ",,0\n";
            for (const auto& p : peaks) out << t.id << ',' << marker << ',' << p.allele.text() << ',' << p.height << '\n';
        }
    }
    out.precision(precision);
}

/// Writes profiles in the ingestion schema.
inline void write_profiles(std::ostream& out, const std::vector<GenotypeProfile>& profiles) {
    out << "individual,marker,allele1,allele2\n";
    for (const auto& p : profiles) {
        for (const auto& [marker, g] : p.markers) {
            out << p.id << ',' << marker << ',' << g.first.text() << ',' << g.second.text() << '\n';
        }
    }
}

}  // namespace mixref
