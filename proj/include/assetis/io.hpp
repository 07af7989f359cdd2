#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "assetis/mc.hpp"
#include "assetis/types.hpp"

namespace assetis {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != trim(s).size() && pos != s.size())
            throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw DataError("cannot parse number '" + s + "' in " + what);
    }
}

// full-precision formatting; %.17g round-trips every double
inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6e", v);
    return buf;
}

}  // namespace detail

// -------- expression matrix CSV (header row of cell labels, one row per subject) --------

inline ExpressionMatrix read_expression_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open expression file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty expression file: " + path);
    const auto labels = detail::split(detail::trim(line), ',');
    const auto C = labels.size();
    if (C == 0) throw DataError("expression header has no columns: " + path);
    std::vector<double> vals;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto cells = detail::split(line, ',');
        if (cells.size() != C)
            throw DataError(path + ": row " + std::to_string(rows + 2) + " has " +
                            std::to_string(cells.size()) + " fields, expected " +
                            std::to_string(C));
        for (const auto& c : cells) {
            const std::string t = detail::trim(c);
            if (t.empty()) throw DataError(path + ": missing value in row " +
                                           std::to_string(rows + 2));
            vals.push_back(detail::parse_double(t, path));
        }
        ++rows;
    }
    if (rows < 2) throw DataError(path + ": need at least two subject rows");
    Eigen::MatrixXd raw(rows, static_cast<Eigen::Index>(C));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < C; ++c)
            raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = vals[i * C + c];
    std::vector<std::string> trimmed;
    for (const auto& l : labels) trimmed.push_back(detail::trim(l));
    return ExpressionMatrix::from_raw(std::move(raw), std::move(trimmed));
}

inline void write_expression_csv(const std::string& path, const Eigen::MatrixXd& values,
                                 const std::vector<std::string>& labels) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write: " + path);
    for (std::size_t c = 0; c < labels.size(); ++c)
        out << (c ? "," : "") << labels[c];
    out << "\n";
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index c = 0; c < values.cols(); ++c)
            out << (c ? "," : "") << detail::format_full(values(i, c));
        out << "\n";
    }
}

// -------- square matrix CSV (no header) --------

inline Eigen::MatrixXd read_square_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open matrix file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty()) continue;
        std::vector<double> row;
        for (const auto& c : detail::split(line, ','))
            row.push_back(detail::parse_double(detail::trim(c), path));
        rows.push_back(std::move(row));
    }
    const auto n = rows.size();
    if (n == 0) throw DataError("empty matrix file: " + path);
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (rows[i].size() != n)
            throw DataError(path + ": matrix is not square at row " + std::to_string(i + 1));
        for (std::size_t j = 0; j < n; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

// -------- study design config: flat `key = value` lines --------
//
//   n = [100, 200, 150]          per-study sample sizes (required)
//   case_fraction = [0.4, 0.5]   optional, one entry per study
//   sigma_file = path.csv        optional M x M score correlation (CSV)
//
// '#' starts a comment; keys may appear once.

inline Eigen::VectorXd parse_number_list(const std::string& v, const std::string& what) {
    std::string s = detail::trim(v);
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
        throw ConfigError(what + " must be a bracketed list like [1, 2, 3]");
    s = s.substr(1, s.size() - 2);
    std::vector<double> vals;
    for (const auto& item : detail::split(s, ','))
        vals.push_back(detail::parse_double(detail::trim(item), what));
    return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline StudyDesign read_design(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open design file: " + path);
    StudyDesign d;
    std::string line;
    bool have_n = false;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key == "n") {
            d.n = parse_number_list(val, "n");
            have_n = true;
        } else if (key == "case_fraction") {
            d.case_fraction = parse_number_list(val, "case_fraction");
        } else if (key == "sigma_file") {
            std::string sp = val;
            if (!sp.empty() && sp.front() != '/') {
                const auto slash = path.find_last_of('/');
                if (slash != std::string::npos) sp = path.substr(0, slash + 1) + sp;
            }
            d.sigma = read_square_csv(sp);
        } else {
            throw ConfigError(path + ": unknown design key '" + key + "'");
        }
    }
    if (!have_n) throw ConfigError(path + ": design file must set n");
    d.validate();
    return d;
}

// -------- synthetic expression generators --------
//
// Stand-ins for the qualitative expression shapes seen in single-cell data:
// roughly normal, bimodal, sharply bimodal, and zero-inflated columns.

inline Eigen::MatrixXd synthetic_expression_raw(const std::string& tag, int n_subjects,
                                                int n_cells, std::uint64_t seed) {
    if (n_subjects < 2 || n_cells < 1) throw ConfigError("synthetic matrix needs N >= 2, C >= 1");
    std::mt19937_64 rng = rng_stream(seed, 0);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> unif;
    Eigen::MatrixXd raw(n_subjects, n_cells);
    auto fill = [&](auto draw) {
        for (Eigen::Index c = 0; c < raw.cols(); ++c)
            for (Eigen::Index i = 0; i < raw.rows(); ++i) raw(i, c) = draw();
    };
    if (tag == "normal") {
        fill([&] { return nd(rng); });
    } else if (tag == "bimodal") {
        fill([&] { return (unif(rng) < 0.5 ? -1.5 : 1.5) + 0.5 * nd(rng); });
    } else if (tag == "sharp-bimodal") {
        fill([&] {
            return unif(rng) < 0.85 ? 0.5 + 0.2 * nd(rng) : -2.5 + 0.3 * nd(rng);
        });
    } else if (tag == "zero-inflated") {
        fill([&] { return unif(rng) < 0.7 ? 0.0 : 1.0 + nd(rng); });
    } else {
        throw ConfigError("unknown synthetic expression tag: " + tag +
                          " (use normal|bimodal|sharp-bimodal|zero-inflated)");
    }
    return raw;
}

inline ExpressionMatrix generate_synthetic_expression(const std::string& tag, int n_subjects,
                                                      int n_cells, std::uint64_t seed) {
    return ExpressionMatrix::from_raw(synthetic_expression_raw(tag, n_subjects, n_cells, seed));
}

// -------- result records --------

struct ResultRow {
    double b = 0.0;
    std::optional<Estimate> is;
    std::optional<Estimate> mc;
    std::optional<double> dlm;
    std::optional<EfficiencyReport> eff;
};

struct ResultRecord {
    std::string mode;
    std::string version = kVersion;
    std::uint64_t seed = 0;
    std::uint64_t K = 0;
    double maf = 0.0;
    double ridge = 0.0;
    bool maf_folded = false;
    double wall_seconds = 0.0;
    std::vector<std::string> warnings;
    std::vector<ResultRow> rows;
};

inline nlohmann::json estimate_to_json(const Estimate& e) {
    return {{"p", e.p_hat},          {"se", e.se},
            {"var_delta", e.var_delta}, {"K", e.K},
            {"hits", e.hit_count},   {"method", method_name(e.method)},
            {"zero_hits", e.zero_hits}};
}

inline Estimate estimate_from_json(const nlohmann::json& j) {
    Estimate e;
    e.p_hat = j.at("p").get<double>();
    e.se = j.at("se").get<double>();
    e.var_delta = j.at("var_delta").get<double>();
    e.K = j.at("K").get<std::uint64_t>();
    e.hit_count = j.at("hits").get<std::uint64_t>();
    const std::string m = j.at("method").get<std::string>();
    e.method = m == "is" ? Method::IS : (m == "mc" ? Method::MC : Method::DLM);
    e.zero_hits = j.at("zero_hits").get<bool>();
    return e;
}

inline nlohmann::json record_to_json(const ResultRecord& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json j{{"b", row.b}};
        j["is"] = row.is ? estimate_to_json(*row.is) : nlohmann::json(nullptr);
        j["mc"] = row.mc ? estimate_to_json(*row.mc) : nlohmann::json(nullptr);
        j["dlm"] = row.dlm ? nlohmann::json(*row.dlm) : nlohmann::json(nullptr);
        if (row.eff)
            j["efficiency"] = {{"K_is", row.eff->K_is},
                               {"K_mc", row.eff->K_mc},
                               {"E", row.eff->efficiency}};
        else
            j["efficiency"] = nullptr;
        rows.push_back(std::move(j));
    }
    return {{"mode", r.mode},       {"version", r.version}, {"seed", r.seed},
            {"K", r.K},             {"maf", r.maf},         {"ridge", r.ridge},
            {"maf_folded", r.maf_folded},
            {"wall_seconds", r.wall_seconds},
            {"warnings", r.warnings}, {"rows", rows}};
}

inline ResultRecord record_from_json(const nlohmann::json& j) {
    ResultRecord r;
    r.mode = j.at("mode").get<std::string>();
    r.version = j.at("version").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.K = j.at("K").get<std::uint64_t>();
    r.maf = j.at("maf").get<double>();
    r.ridge = j.at("ridge").get<double>();
    r.maf_folded = j.at("maf_folded").get<bool>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& jr : j.at("rows")) {
        ResultRow row;
        row.b = jr.at("b").get<double>();
        if (!jr.at("is").is_null()) row.is = estimate_from_json(jr.at("is"));
        if (!jr.at("mc").is_null()) row.mc = estimate_from_json(jr.at("mc"));
        if (!jr.at("dlm").is_null()) row.dlm = jr.at("dlm").get<double>();
        if (!jr.at("efficiency").is_null()) {
            EfficiencyReport e;
            e.K_is = jr.at("efficiency").at("K_is").get<double>();
            e.K_mc = jr.at("efficiency").at("K_mc").get<double>();
            e.efficiency = jr.at("efficiency").at("E").get<double>();
            row.eff = e;
        }
        r.rows.push_back(std::move(row));
    }
    return r;
}

inline void write_record_json(const std::string& path, const ResultRecord& r) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write: " + path);
    out << record_to_json(r).dump(2) << "\n";
}

// One row per threshold; missing estimators are empty fields, never zeros.
// Rows estimated as exactly zero carry the rule-of-three upper bound 3/K.
inline void write_record_csv(const std::string& path, const ResultRecord& r) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write: " + path);
    out << "b,p_is,se_is,hits_is,p_upper_is,p_dlm,p_mc,se_mc,hits_mc,p_upper_mc,"
           "K_is_needed,K_mc_needed,efficiency,seed,version\n";
    auto est_cols = [&](const std::optional<Estimate>& e) {
        if (!e) {
            out << ",,,,";
            return;
        }
        out << detail::format_sci(e->p_hat) << "," << detail::format_sci(e->se) << ","
            << e->hit_count << ",";
        if (e->zero_hits)
            out << detail::format_sci(3.0 / static_cast<double>(e->K));
        out << ",";
    };
    for (const auto& row : r.rows) {
        out << detail::format_sci(row.b) << ",";
        est_cols(row.is);
        if (row.dlm) out << detail::format_sci(*row.dlm);
        out << ",";
        est_cols(row.mc);
        if (row.eff)
            out << detail::format_sci(row.eff->K_is) << "," << detail::format_sci(row.eff->K_mc)
                << "," << detail::format_sci(row.eff->efficiency);
        else
            out << ",,";
        out << "," << r.seed << "," << r.version << "\n";
    }
}

// Plot-data series: b and -log10(p) with SE bands per estimator. Zero
// estimates are emitted with a `censored` sentinel and no log value.
inline void write_curve_csv(const std::string& path, const ResultRecord& r,
                            bool efficiency_series = false) {
    if (r.rows.size() < 2) throw ConfigError("curve output needs a grid of at least 2 points");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write: " + path);
    out << "estimator,b,neglog10_p,neglog10_p_lo,neglog10_p_hi,censored\n";
    auto series = [&](const char* name, double b, double p, double se, bool has_se) {
        out << name << "," << detail::format_sci(b) << ",";
        if (p > 0.0) {
            out << detail::format_sci(-std::log10(p)) << ",";
            if (has_se) {
                const double lo = p + se > 0 ? -std::log10(p + se) : 0.0;
                const double hi = p - se > 0 ? -std::log10(p - se) : 0.0;
                out << detail::format_sci(lo) << ",";
                if (hi > 0)
                    out << detail::format_sci(hi);
                out << ",0\n";
            } else {
                out << ",,0\n";
            }
        } else {
            out << ",,,1\n";
        }
    };
    for (const auto& row : r.rows) {
        if (row.is) series("is", row.b, row.is->p_hat, row.is->se, true);
        if (row.dlm) series("dlm", row.b, *row.dlm, 0.0, false);
        if (row.mc) series("mc", row.b, row.mc->p_hat, row.mc->se, true);
        if (efficiency_series && row.eff && row.eff->efficiency > 0)
            out << "efficiency," << detail::format_sci(row.b) << ","
                << detail::format_sci(std::log10(row.eff->efficiency)) << ",,,0\n";
    }
}

}  // namespace assetis
