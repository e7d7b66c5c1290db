#pragma once

// Power-law regression linking attack vulnerability to shots and classes:
// log10(tpr - fpr) = beta_S log10(S) + beta_C log10(C) + beta_0 (gap form),
// or log10(tpr) on the same design (tpr-only form). Base-10 logs throughout;
// fitting is plain OLS. Bundled reference tables ship as CSV next to the
// library and can be addressed by short name.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "miascope/numerics.hpp"

namespace miascope {

enum class RecordSource { bundled_table, simulation, ingested };

inline const char* to_string(RecordSource s) {
    switch (s) {
        case RecordSource::bundled_table: return "bundled-table";
        case RecordSource::simulation: return "simulation";
        case RecordSource::ingested: return "ingested";
    }
    return "unknown";
}

// One measured vulnerability point: TPR at a fixed FPR for a model trained
// with C classes and S shots per class.
struct VulnerabilityRecord {
    std::string dataset_name;
    double num_classes = 0.0;
    double shots = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
    RecordSource source = RecordSource::ingested;

    void validate() const {
        if (!(fpr > 0.0 && fpr < 1.0))
            throw std::invalid_argument("VulnerabilityRecord: fpr must lie in (0,1)");
        if (!(tpr >= 0.0 && tpr <= 1.0))
            throw std::invalid_argument("VulnerabilityRecord: tpr must lie in [0,1]");
        if (!(num_classes >= 1.0) || !(shots >= 1.0))
            throw std::invalid_argument("VulnerabilityRecord: C and S must be >= 1");
    }
};

enum class LawForm {
    gap,       // response log10(tpr - fpr); usable only when tpr > fpr
    tpr_only,  // response log10(tpr); usable only when tpr > 0
};

inline const char* to_string(LawForm f) {
    return f == LawForm::gap ? "gap" : "tpr-only";
}

struct PowerLawFit {
    double fpr = 0.0;
    LawForm form = LawForm::gap;
    double beta_shots = 0.0;      // coefficient on log10(S)
    double beta_classes = 0.0;    // coefficient on log10(C)
    double beta_intercept = 0.0;
    OlsFit ols;                   // full inference: SEs, t, p, CIs, R^2
    std::size_t n_used = 0;
    std::size_t n_dropped = 0;    // records at this fpr with unusable response
};

namespace detail {

inline bool fpr_matches(double record_fpr, double requested) {
    return std::fabs(record_fpr - requested) <= 1e-9 + 1e-6 * requested;
}

// Response on the log10 scale; NaN when the record is unusable for the form.
inline double law_response(const VulnerabilityRecord& r, LawForm form) {
    if (form == LawForm::gap) {
        const double gap = r.tpr - r.fpr;
        return gap > 0.0 ? std::log10(gap) : std::numeric_limits<double>::quiet_NaN();
    }
    return r.tpr > 0.0 ? std::log10(r.tpr) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

inline PowerLawFit fit_power_law(const std::vector<VulnerabilityRecord>& records, double fpr,
                                 LawForm form) {
    if (!(fpr > 0.0 && fpr < 1.0))
        throw std::invalid_argument("fit_power_law: fpr must lie in (0,1)");
    std::vector<std::array<double, 3>> rows;  // [log10 S, log10 C, y]
    std::size_t dropped = 0;
    for (const auto& r : records) {
        if (!detail::fpr_matches(r.fpr, fpr)) continue;
        r.validate();
        const double y = detail::law_response(r, form);
        if (std::isnan(y)) {
            ++dropped;
            continue;
        }
        rows.push_back({std::log10(r.shots), std::log10(r.num_classes), y});
    }
    const std::size_t used = rows.size();
    if (used < 4) {
        std::ostringstream msg;
        msg << "fit_power_law: need at least 4 usable records at fpr=" << fpr << ", have " << used
            << " (" << dropped << " dropped as unusable for the " << to_string(form) << " form)";
        throw std::runtime_error(msg.str());
    }
    // canonical row order keeps the fit independent of record order
    std::sort(rows.begin(), rows.end());
    Matrix design(used, 3);
    std::vector<double> ys(used);
    for (std::size_t i = 0; i < used; ++i) {
        design(i, 0) = rows[i][0];
        design(i, 1) = rows[i][1];
        design(i, 2) = 1.0;
        ys[i] = rows[i][2];
    }

    PowerLawFit fit;
    fit.fpr = fpr;
    fit.form = form;
    fit.ols = ols_fit(design, ys);
    fit.beta_shots = fit.ols.coefficients[0];
    fit.beta_classes = fit.ols.coefficients[1];
    fit.beta_intercept = fit.ols.coefficients[2];
    fit.n_used = used;
    fit.n_dropped = dropped;
    return fit;
}

// Predicted log10 response at (C, S); the fit's linear predictor.
inline double predict_log10_response(const PowerLawFit& fit, double num_classes, double shots) {
    return fit.beta_shots * std::log10(shots) + fit.beta_classes * std::log10(num_classes) +
           fit.beta_intercept;
}

// Predicted TPR at the fit's FPR. Gap form maps back as fpr + 10^response,
// clipped to [fpr, 1]; tpr-only form maps back as 10^response, clipped to
// [0, 1]. The gap form can never predict tpr below fpr.
inline double predict(const PowerLawFit& fit, double num_classes, double shots) {
    if (!(num_classes >= 1.0) || !(shots >= 1.0))
        throw std::invalid_argument("predict: C and S must be >= 1");
    const double response = std::pow(10.0, predict_log10_response(fit, num_classes, shots));
    if (fit.form == LawForm::gap) {
        const double tpr = fit.fpr + response;
        return tpr > 1.0 ? 1.0 : tpr;
    }
    return response > 1.0 ? 1.0 : response;
}

// Out-of-sample R^2 on the log10 response scale, about the test-set mean.
// Uses the records at the fit's FPR that are usable for the fit's form;
// requires at least 2 such records with nonzero response variance.
inline double test_r2(const PowerLawFit& fit, const std::vector<VulnerabilityRecord>& records) {
    std::vector<double> actual;
    std::vector<double> predicted;
    for (const auto& r : records) {
        if (!detail::fpr_matches(r.fpr, fit.fpr)) continue;
        const double y = detail::law_response(r, fit.form);
        if (std::isnan(y)) continue;
        actual.push_back(y);
        predicted.push_back(predict_log10_response(fit, r.num_classes, r.shots));
    }
    if (actual.size() < 2)
        throw std::runtime_error("test_r2: need at least 2 usable records at the fit's fpr");
    double mean = 0.0;
    for (double y : actual) mean += y;
    mean /= static_cast<double>(actual.size());
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
        ss_tot += (actual[i] - mean) * (actual[i] - mean);
    }
    if (ss_tot <= 0.0) throw std::runtime_error("test_r2: test responses have zero variance");
    return 1.0 - ss_res / ss_tot;
}

// ---- bundled tables -------------------------------------------------------

inline const std::vector<std::string>& bundled_table_names() {
    static const std::vector<std::string> names = {
        "vitb_head_shots", "r50_head_shots", "vitb_head_classes", "r50_head_classes",
        "film_scratch_comparison"};
    return names;
}

// Data directory precedence: explicit argument, then MIASCOPE_DATA_DIR
// environment variable, then the compile-time default.
inline std::string resolve_data_dir(const std::string& explicit_dir = "") {
    if (!explicit_dir.empty()) return explicit_dir;
    if (const char* env = std::getenv("MIASCOPE_DATA_DIR"); env != nullptr && *env != '\0')
        return env;
#ifdef MIASCOPE_DATA_DIR
    return MIASCOPE_DATA_DIR;
#else
    return "data";
#endif
}

namespace detail {

inline std::string strip_ws(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(strip_ws(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(strip_ws(cur));
    return fields;
}

inline double parse_double_field(const std::string& field, const char* what, std::size_t line_no,
                                 const std::string& path) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        std::ostringstream msg;
        msg << path << ":" << line_no << ": cannot parse " << what << " from '" << field << "'";
        throw std::runtime_error(msg.str());
    }
}

}  // namespace detail

// Loads `dataset,C,S,fpr,tpr` CSV. Malformed input errors name the line.
inline std::vector<VulnerabilityRecord> load_vulnerability_csv(
    const std::string& path, RecordSource source = RecordSource::ingested) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open records file: " + path);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    ++line_no;
    const auto header = detail::split_csv_line(line);
    const std::vector<std::string> expected = {"dataset", "C", "S", "fpr", "tpr"};
    if (header != expected)
        throw std::runtime_error(path + ":1: expected header 'dataset,C,S,fpr,tpr'");
    std::vector<VulnerabilityRecord> records;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::strip_ws(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 5) {
            std::ostringstream msg;
            msg << path << ":" << line_no << ": expected 5 fields, got " << fields.size();
            throw std::runtime_error(msg.str());
        }
        VulnerabilityRecord r;
        r.dataset_name = fields[0];
        r.num_classes = detail::parse_double_field(fields[1], "C", line_no, path);
        r.shots = detail::parse_double_field(fields[2], "S", line_no, path);
        r.fpr = detail::parse_double_field(fields[3], "fpr", line_no, path);
        r.tpr = detail::parse_double_field(fields[4], "tpr", line_no, path);
        r.source = source;
        try {
            r.validate();
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << path << ":" << line_no << ": " << e.what();
            throw std::runtime_error(msg.str());
        }
        records.push_back(std::move(r));
    }
    if (records.empty()) throw std::runtime_error(path + ": no data rows");
    return records;
}

// Loads a bundled table by short name; unknown names list what is available.
inline std::vector<VulnerabilityRecord> load_bundled_table(const std::string& name,
                                                           const std::string& data_dir = "") {
    bool known = false;
    for (const auto& n : bundled_table_names()) known = known || n == name;
    if (!known) {
        std::ostringstream msg;
        msg << "unknown bundled table '" << name << "'; available:";
        for (const auto& n : bundled_table_names()) msg << " " << n;
        throw std::invalid_argument(msg.str());
    }
    const std::string path = resolve_data_dir(data_dir) + "/" + name + ".csv";
    return load_vulnerability_csv(path, RecordSource::bundled_table);
}

// Resolves `bundled:NAME` to a bundled table, anything else to a CSV path.
inline std::vector<VulnerabilityRecord> load_records(const std::string& spec_string,
                                                     const std::string& data_dir = "") {
    constexpr const char* kPrefix = "bundled:";
    if (spec_string.rfind(kPrefix, 0) == 0)
        return load_bundled_table(spec_string.substr(std::string(kPrefix).size()), data_dir);
    return load_vulnerability_csv(spec_string, RecordSource::ingested);
}

}  // namespace miascope
