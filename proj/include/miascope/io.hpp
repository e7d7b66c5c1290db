#pragma once

// Serialization boundary: score-matrix exchange as CSV plus JSON sidecar,
// a normalized JSON matrix store, and attack-result JSON export. Floating
// point values round-trip exactly (shortest-representation printing on the
// JSON side, 17 significant digits on the CSV side).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "miascope/attacks.hpp"

namespace miascope {

namespace detail {

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::size_t require_count(const nlohmann::json& j, const char* key,
                                 const std::string& path) {
    if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 1)
        throw std::runtime_error(path + ": missing or invalid '" + key + "'");
    return j[key].get<std::size_t>();
}

}  // namespace detail

// ---- CSV exchange format ---------------------------------------------------

// One row per (example, model) pair: `example_id,model_id,is_member,score,class`.
// The sidecar carries the matrix shape so completeness is checkable.
inline void write_score_csv(const ScoreMatrix& matrix, const std::string& csv_path,
                            const std::string& sidecar_path) {
    matrix.validate(0, 0);
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot open " + csv_path + " for writing");
    out << "example_id,model_id,is_member,score,class\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < matrix.num_examples; ++i)
        for (std::size_t m = 0; m < matrix.num_models; ++m)
            out << i << ',' << m << ',' << (matrix.is_member(i, m) ? 1 : 0) << ','
                << matrix.score_at(i, m) << ',' << matrix.example_class[i] << '\n';
    if (!out) throw std::runtime_error("write failed: " + csv_path);

    nlohmann::json sidecar = {{"num_examples", matrix.num_examples},
                              {"num_models", matrix.num_models}};
    detail::write_json_file(sidecar, sidecar_path);
}

// Reads and validates the CSV exchange format: every (example, model) pair
// exactly once, consistent class per example, and enough shadow columns on
// each membership side for the attacks to form variances.
inline ScoreMatrix read_score_csv(const std::string& csv_path, const std::string& sidecar_path,
                                  std::size_t min_in = 2, std::size_t min_out = 2) {
    const nlohmann::json sidecar = detail::load_json_file(sidecar_path);
    const std::size_t n = detail::require_count(sidecar, "num_examples", sidecar_path);
    const std::size_t m = detail::require_count(sidecar, "num_models", sidecar_path);

    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open " + csv_path);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error(csv_path + ": empty file");
    ++line_no;
    {
        std::istringstream hs(line);
        std::string h;
        std::getline(hs, h);
        while (!h.empty() && (h.back() == '\r' || h.back() == ' ')) h.pop_back();
        if (h != "example_id,model_id,is_member,score,class")
            throw std::runtime_error(csv_path +
                                     ":1: expected header 'example_id,model_id,is_member,score,class'");
    }

    ScoreMatrix matrix;
    matrix.num_examples = n;
    matrix.num_models = m;
    matrix.scores.assign(n * m, 0.0);
    matrix.membership.assign(n * m, 0);
    matrix.example_class.assign(n, 0);
    std::vector<std::uint8_t> seen(n * m, 0);
    std::vector<std::uint8_t> class_set(n, 0);

    auto fail = [&](const std::string& what) -> std::runtime_error {
        return std::runtime_error(csv_path + ":" + std::to_string(line_no) + ": " + what);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string f[5];
        for (int k = 0; k < 5; ++k)
            if (!std::getline(row, f[k], ',')) throw fail("expected 5 fields");
        if (std::getline(row, f[0], ',')) throw fail("expected 5 fields");

        std::size_t ex, mo, cls;
        int member;
        double score;
        try {
            std::size_t pos;
            ex = std::stoull(f[0], &pos);
            if (pos != f[0].size()) throw std::invalid_argument("");
            mo = std::stoull(f[1], &pos);
            if (pos != f[1].size()) throw std::invalid_argument("");
            member = std::stoi(f[2], &pos);
            if (pos != f[2].size()) throw std::invalid_argument("");
            score = std::stod(f[3], &pos);
            if (pos != f[3].size()) throw std::invalid_argument("");
            cls = std::stoull(f[4], &pos);
            if (pos != f[4].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw fail("cannot parse row '" + line + "'");
        }
        if (ex >= n) throw fail("example_id " + std::to_string(ex) + " out of range");
        if (mo >= m) throw fail("model_id " + std::to_string(mo) + " out of range");
        if (member != 0 && member != 1) throw fail("is_member must be 0 or 1");
        if (!std::isfinite(score)) throw fail("score must be finite");
        const std::size_t idx = ex * m + mo;
        if (seen[idx])
            throw fail("duplicate pair (example " + std::to_string(ex) + ", model " +
                       std::to_string(mo) + ")");
        seen[idx] = 1;
        matrix.scores[idx] = score;
        matrix.membership[idx] = static_cast<std::uint8_t>(member);
        if (class_set[ex]) {
            if (matrix.example_class[ex] != cls)
                throw fail("class mismatch for example " + std::to_string(ex));
        } else {
            matrix.example_class[ex] = cls;
            class_set[ex] = 1;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (!seen[i * m + j])
                throw std::runtime_error(csv_path + ": missing pair (example " + std::to_string(i) +
                                         ", model " + std::to_string(j) + ")");
    matrix.validate(min_in, min_out);
    return matrix;
}

// ---- normalized JSON store -------------------------------------------------

inline nlohmann::json score_matrix_to_json(const ScoreMatrix& matrix) {
    matrix.validate(0, 0);
    nlohmann::json j;
    j["format"] = "score-matrix";
    j["version"] = 1;
    j["num_examples"] = matrix.num_examples;
    j["num_models"] = matrix.num_models;
    j["example_class"] = matrix.example_class;
    nlohmann::json membership = nlohmann::json::array();
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t i = 0; i < matrix.num_examples; ++i) {
        nlohmann::json mrow = nlohmann::json::array();
        nlohmann::json srow = nlohmann::json::array();
        for (std::size_t m = 0; m < matrix.num_models; ++m) {
            mrow.push_back(matrix.is_member(i, m) ? 1 : 0);
            srow.push_back(matrix.score_at(i, m));
        }
        membership.push_back(std::move(mrow));
        scores.push_back(std::move(srow));
    }
    j["membership"] = std::move(membership);
    j["scores"] = std::move(scores);
    return j;
}

inline ScoreMatrix score_matrix_from_json(const nlohmann::json& j, const std::string& origin) {
    if (!j.contains("format") || j["format"] != "score-matrix")
        throw std::runtime_error(origin + ": not a score-matrix document");
    const std::size_t n = detail::require_count(j, "num_examples", origin);
    const std::size_t m = detail::require_count(j, "num_models", origin);
    ScoreMatrix matrix;
    matrix.num_examples = n;
    matrix.num_models = m;
    try {
        matrix.example_class = j.at("example_class").get<std::vector<std::size_t>>();
        const auto& membership = j.at("membership");
        const auto& scores = j.at("scores");
        if (membership.size() != n || scores.size() != n)
            throw std::runtime_error("row count mismatch");
        matrix.membership.reserve(n * m);
        matrix.scores.reserve(n * m);
        for (std::size_t i = 0; i < n; ++i) {
            if (membership[i].size() != m || scores[i].size() != m)
                throw std::runtime_error("column count mismatch");
            for (std::size_t c = 0; c < m; ++c) {
                matrix.membership.push_back(membership[i][c].get<int>() ? 1 : 0);
                matrix.scores.push_back(scores[i][c].get<double>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(origin + ": malformed score-matrix document: " + e.what());
    }
    matrix.validate(0, 0);
    return matrix;
}

inline void write_matrix_json(const ScoreMatrix& matrix, const std::string& path) {
    detail::write_json_file(score_matrix_to_json(matrix), path);
}

inline ScoreMatrix read_matrix_json(const std::string& path) {
    return score_matrix_from_json(detail::load_json_file(path), path);
}

// ---- attack result export --------------------------------------------------

inline nlohmann::json interval_to_json(const ClopperPearsonInterval& ci) {
    return {{"tp", ci.tp},
            {"p", ci.p},
            {"confidence", ci.confidence},
            {"low", ci.low},
            {"high", ci.high}};
}

inline nlohmann::json attack_result_to_json(const AttackResult& result,
                                            bool include_scores = true) {
    nlohmann::json j;
    j["positives"] = result.positives;
    j["negatives"] = result.negatives;
    j["clamped"] = result.clamped;
    j["pairs_skipped"] = result.pairs_skipped;
    if (include_scores) j["scores"] = result.per_example_score;
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& [fpr, tpr] : result.roc) roc.push_back({fpr, tpr});
    j["roc"] = std::move(roc);
    nlohmann::json at = nlohmann::json::array();
    for (const auto& [requested, v] : result.tpr_at) {
        nlohmann::json row;
        row["requested_fpr"] = v.requested_fpr;
        row["achieved_fpr"] = v.achieved_fpr;
        row["tpr"] = v.tpr;
        row["tp"] = v.tp;
        row["fp"] = v.fp;
        if (std::isfinite(v.threshold)) row["threshold"] = v.threshold;
        else row["threshold"] = nullptr;
        row["interval"] = interval_to_json(v.interval);
        at.push_back(std::move(row));
    }
    j["tpr_at"] = std::move(at);
    return j;
}

inline void write_attack_result(const AttackResult& result, const std::string& path,
                                bool include_scores = true) {
    detail::write_json_file(attack_result_to_json(result, include_scores), path);
}

}  // namespace miascope
