#pragma once

// Experiment plumbing: a JSON-configured sweep over (classes, shots, seed)
// cells, each running pool generation, stratified shadow splitting, score
// synthesis, and leave-one-out attacks; manifests and CSV reports make every
// emitted number re-derivable. Per-cell RNG streams derive from (master
// seed, cell identity), so worker count never changes results. Cell result
// files contain no timing, so reruns are byte-identical.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "miascope/analytic.hpp"
#include "miascope/attacks.hpp"
#include "miascope/io.hpp"
#include "miascope/lawfit.hpp"
#include "miascope/simmodel.hpp"
#include "miascope/stats.hpp"

namespace miascope {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kWorkersEnvVar = "MIASCOPE_WORKERS";

inline const char* to_string(AttackKind k) { return k == AttackKind::lira ? "lira" : "rmia"; }

inline AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "lira") return AttackKind::lira;
    if (s == "rmia") return AttackKind::rmia;
    throw std::invalid_argument("unknown attack kind '" + s + "' (expected lira or rmia)");
}

inline const char* to_string(VarianceMode m) {
    return m == VarianceMode::separate ? "separate" : "shared";
}

inline VarianceMode variance_mode_from_string(const std::string& s) {
    if (s == "separate") return VarianceMode::separate;
    if (s == "shared") return VarianceMode::shared;
    throw std::invalid_argument("unknown variance mode '" + s + "' (expected separate or shared)");
}

// Default worker count: the env override, else 1.
inline std::size_t default_workers() {
    if (const char* env = std::getenv(kWorkersEnvVar); env != nullptr && *env != '\0') {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == nullptr || *end != '\0' || v < 1)
            throw std::runtime_error(std::string(kWorkersEnvVar) + " must be a positive integer");
        return static_cast<std::size_t>(v);
    }
    return 1;
}

// ---- sweep configuration ----------------------------------------------------

struct ExperimentConfig {
    std::size_t dimension = 32;
    double in_class_std = 0.1;
    std::size_t pool_factor = 2;
    std::size_t num_models = 64;
    std::vector<std::size_t> shots_list = {16};
    std::vector<std::size_t> classes_list = {2};
    std::vector<double> fprs = {0.1};
    std::size_t num_seeds = 1;
    std::uint64_t master_seed = 1;
    std::vector<AttackKind> attack_kinds = {AttackKind::lira};
    VarianceMode variance_mode = VarianceMode::separate;
    double rmia_gamma = 2.0;
    std::size_t rmia_num_z = 0;      // 0 = attack default
    std::size_t rmia_targets = 0;    // 0 = all models
    double sigma_floor = 1e-9;
    std::size_t workers = 0;         // 0 = env var or 1
    bool export_matrices = false;    // also write per-cell score CSVs
    std::string output_dir = "runs/sweep";

    AttackConfig attack_config(AttackKind kind) const {
        AttackConfig a;
        a.attack = kind;
        a.variance_mode = variance_mode;
        a.rmia_gamma = rmia_gamma;
        a.rmia_num_z = rmia_num_z;
        a.sigma_floor = sigma_floor;
        return a;
    }

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw std::invalid_argument("config." + field + ": " + why);
        };
        if (dimension < 1) fail("dimension", "must be >= 1");
        if (!(in_class_std > 0.0)) fail("in_class_std", "must be > 0");
        if (pool_factor < 2) fail("pool_factor", "must be >= 2");
        if (num_models % pool_factor != 0 || num_models < 2 * pool_factor)
            fail("num_models", "must be a multiple of pool_factor, >= 2*pool_factor");
        if (num_models / pool_factor < 3 || num_models - num_models / pool_factor < 3)
            fail("num_models", "leaves too few shadow columns per membership side");
        if (shots_list.empty()) fail("shots", "sweep list must be nonempty");
        for (auto s : shots_list)
            if (s < 2) fail("shots", "every value must be >= 2");
        if (classes_list.empty()) fail("classes", "sweep list must be nonempty");
        for (auto c : classes_list)
            if (c < 1) fail("classes", "every value must be >= 1");
        if (fprs.empty()) fail("fprs", "list must be nonempty");
        for (auto f : fprs)
            if (!(f > 0.0 && f < 1.0)) fail("fprs", "values must lie in (0,1)");
        if (num_seeds < 1) fail("num_seeds", "must be >= 1");
        if (attack_kinds.empty()) fail("attacks", "list must be nonempty");
        if (!(rmia_gamma > 1.0)) fail("rmia_gamma", "must be > 1");
        if (!(sigma_floor > 0.0)) fail("sigma_floor", "must be > 0");
        if (output_dir.empty()) fail("output_dir", "must be set");
    }
};

namespace detail {

template <typename T>
inline T get_field(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument(std::string("config.") + key + ": wrong type");
    }
}

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == it.key();
        if (!ok) throw std::invalid_argument("config." + it.key() + ": unknown field");
    }
}

}  // namespace detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["dimension"] = c.dimension;
    j["in_class_std"] = c.in_class_std;
    j["pool_factor"] = c.pool_factor;
    j["num_models"] = c.num_models;
    j["shots"] = c.shots_list;
    j["classes"] = c.classes_list;
    j["fprs"] = c.fprs;
    j["num_seeds"] = c.num_seeds;
    j["master_seed"] = c.master_seed;
    nlohmann::json kinds = nlohmann::json::array();
    for (auto k : c.attack_kinds) kinds.push_back(to_string(k));
    j["attacks"] = std::move(kinds);
    j["variance_mode"] = to_string(c.variance_mode);
    j["rmia_gamma"] = c.rmia_gamma;
    j["rmia_num_z"] = c.rmia_num_z;
    j["rmia_targets"] = c.rmia_targets;
    j["sigma_floor"] = c.sigma_floor;
    j["workers"] = c.workers;
    j["export_matrices"] = c.export_matrices;
    j["output_dir"] = c.output_dir;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"dimension", "in_class_std", "pool_factor", "num_models", "shots", "classes", "fprs",
            "num_seeds", "master_seed", "attacks", "variance_mode", "rmia_gamma", "rmia_num_z",
            "rmia_targets", "sigma_floor", "workers", "export_matrices", "output_dir"});
    ExperimentConfig c;
    c.dimension = detail::get_field(j, "dimension", c.dimension);
    c.in_class_std = detail::get_field(j, "in_class_std", c.in_class_std);
    c.pool_factor = detail::get_field(j, "pool_factor", c.pool_factor);
    c.num_models = detail::get_field(j, "num_models", c.num_models);
    c.shots_list = detail::get_field(j, "shots", c.shots_list);
    c.classes_list = detail::get_field(j, "classes", c.classes_list);
    c.fprs = detail::get_field(j, "fprs", c.fprs);
    c.num_seeds = detail::get_field(j, "num_seeds", c.num_seeds);
    c.master_seed = detail::get_field(j, "master_seed", c.master_seed);
    if (j.contains("attacks")) {
        c.attack_kinds.clear();
        for (const auto& k : j.at("attacks")) c.attack_kinds.push_back(attack_kind_from_string(k));
    }
    c.variance_mode =
        variance_mode_from_string(detail::get_field<std::string>(j, "variance_mode", "separate"));
    c.rmia_gamma = detail::get_field(j, "rmia_gamma", c.rmia_gamma);
    c.rmia_num_z = detail::get_field(j, "rmia_num_z", c.rmia_num_z);
    c.rmia_targets = detail::get_field(j, "rmia_targets", c.rmia_targets);
    c.sigma_floor = detail::get_field(j, "sigma_floor", c.sigma_floor);
    c.workers = detail::get_field(j, "workers", c.workers);
    c.export_matrices = detail::get_field(j, "export_matrices", c.export_matrices);
    c.output_dir = detail::get_field<std::string>(j, "output_dir", c.output_dir);
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    return experiment_config_from_json(detail::load_json_file(path));
}

// ---- cell execution ---------------------------------------------------------

struct CellSpec {
    std::size_t num_classes = 0;
    std::size_t shots = 0;
    std::size_t seed_index = 0;
};

inline std::uint64_t derive_cell_seed(std::uint64_t master_seed, const CellSpec& spec) {
    Rng rng(master_seed, 0x63656c6cULL,
            (static_cast<std::uint64_t>(spec.num_classes) << 32) | spec.shots, spec.seed_index);
    return rng.next_u64();
}

struct CellOutcome {
    CellSpec spec;
    std::uint64_t cell_seed = 0;
    std::map<std::string, AttackResult> results;  // keyed by attack kind name
    double wall_ms = 0.0;
    std::string status = "ok";
};

// Evenly spaced model subset; k = 0 selects every model.
inline std::vector<std::size_t> select_targets(std::size_t num_models, std::size_t k) {
    if (k == 0 || k >= num_models) {
        std::vector<std::size_t> v(num_models);
        for (std::size_t i = 0; i < num_models; ++i) v[i] = i;
        return v;
    }
    std::vector<std::size_t> v(k);
    for (std::size_t i = 0; i < k; ++i) v[i] = i * num_models / k;
    return v;
}

inline CellOutcome run_cell(const ExperimentConfig& cfg, const CellSpec& spec,
                            std::size_t workers = 1, ScoreMatrix* keep_matrix = nullptr) {
    const auto start = std::chrono::steady_clock::now();
    CellOutcome out;
    out.spec = spec;
    out.cell_seed = derive_cell_seed(cfg.master_seed, spec);

    SimplifiedModelConfig mc;
    mc.num_classes = spec.num_classes;
    mc.shots = spec.shots;
    mc.dimension = cfg.dimension;
    mc.in_class_std = cfg.in_class_std;
    mc.pool_factor = cfg.pool_factor;
    mc.seed = out.cell_seed;

    SamplePool pool = generate_pool(mc);
    std::vector<std::uint8_t> mask = stratified_shadow_split(
        pool.labels, mc.num_classes, mc.shots, cfg.num_models, cfg.pool_factor, out.cell_seed);
    ScoreMatrix matrix = build_score_matrix(pool, mask, cfg.num_models, workers);
    if (keep_matrix != nullptr) *keep_matrix = matrix;

    for (AttackKind kind : cfg.attack_kinds) {
        AttackConfig attack = cfg.attack_config(kind);
        std::vector<std::size_t> targets = select_targets(
            cfg.num_models, kind == AttackKind::rmia ? cfg.rmia_targets : 0);
        LooOutcome loo = leave_one_out_scores(matrix, attack, targets, out.cell_seed);
        AttackResult result = roc_and_tpr(loo.scores, loo.labels, cfg.fprs);
        result.clamped = loo.clamped;
        result.pairs_skipped = loo.pairs_skipped;
        out.results[to_string(kind)] = std::move(result);
    }

    const auto end = std::chrono::steady_clock::now();
    out.wall_ms = std::chrono::duration<double, std::milli>(end - start).count();
    return out;
}

// Curve thinned to at most max_points, endpoints kept.
inline std::vector<std::pair<double, double>> downsample_roc(
    const std::vector<std::pair<double, double>>& roc, std::size_t max_points) {
    if (max_points < 2 || roc.size() <= max_points) return roc;
    std::vector<std::pair<double, double>> out;
    out.reserve(max_points);
    const std::size_t n = roc.size();
    for (std::size_t k = 0; k < max_points; ++k) out.push_back(roc[k * (n - 1) / (max_points - 1)]);
    return out;
}

// Timing stays out of cell documents so reruns are byte-identical.
inline nlohmann::json cell_to_json(const CellOutcome& cell) {
    nlohmann::json j;
    j["num_classes"] = cell.spec.num_classes;
    j["shots"] = cell.spec.shots;
    j["seed_index"] = cell.spec.seed_index;
    j["cell_seed"] = cell.cell_seed;
    nlohmann::json attacks;
    for (const auto& [name, result] : cell.results) {
        nlohmann::json a = attack_result_to_json(result, /*include_scores=*/false);
        a["roc"] = nlohmann::json::array();
        for (const auto& [f, t] : downsample_roc(result.roc, 512)) a["roc"].push_back({f, t});
        attacks[name] = std::move(a);
    }
    j["attacks"] = std::move(attacks);
    return j;
}

struct RunManifest {
    ExperimentConfig config;
    std::string version = kToolVersion;
    struct CellEntry {
        CellSpec spec;
        std::string path;
        double wall_ms = 0.0;
        std::string status = "ok";
    };
    std::vector<CellEntry> cells;
    bool all_ok = true;
};

inline std::string cell_file_name(const CellSpec& spec) {
    std::ostringstream name;
    name << "cell_C" << spec.num_classes << "_S" << spec.shots << "_seed" << spec.seed_index
         << ".json";
    return name.str();
}

// Runs every (C, S, seed) cell, persists one JSON per cell plus a manifest.
// Cells that throw are recorded as failed; the rest still complete.
inline RunManifest run_experiment(const ExperimentConfig& cfg,
                                  const std::function<void(const CellOutcome&)>& on_cell = {}) {
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);

    std::vector<CellSpec> specs;
    for (std::size_t c : cfg.classes_list)
        for (std::size_t s : cfg.shots_list)
            for (std::size_t k = 0; k < cfg.num_seeds; ++k) specs.push_back({c, s, k});

    RunManifest manifest;
    manifest.config = cfg;
    manifest.cells.resize(specs.size());

    const std::size_t workers =
        std::min(cfg.workers == 0 ? default_workers() : cfg.workers, specs.size());
    std::atomic<std::size_t> next{0};
    std::mutex callback_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            RunManifest::CellEntry entry;
            entry.spec = specs[i];
            entry.path = cell_file_name(specs[i]);
            try {
                ScoreMatrix matrix;
                CellOutcome cell =
                    run_cell(cfg, specs[i], 1, cfg.export_matrices ? &matrix : nullptr);
                detail::write_json_file(cell_to_json(cell),
                                        cfg.output_dir + "/" + entry.path);
                if (cfg.export_matrices) {
                    std::ostringstream base;
                    base << cfg.output_dir << "/matrix_C" << specs[i].num_classes << "_S"
                         << specs[i].shots << "_seed" << specs[i].seed_index;
                    write_score_csv(matrix, base.str() + ".csv", base.str() + ".sidecar.json");
                }
                entry.wall_ms = cell.wall_ms;
                if (on_cell) {
                    std::lock_guard<std::mutex> lock(callback_mutex);
                    on_cell(cell);
                }
            } catch (const std::exception& e) {
                entry.status = std::string("failed: ") + e.what();
                entry.path.clear();
            }
            manifest.cells[i] = std::move(entry);
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    for (const auto& entry : manifest.cells) manifest.all_ok = manifest.all_ok && entry.status == "ok";

    nlohmann::json mj;
    mj["format"] = "run-manifest";
    mj["version"] = manifest.version;
    mj["config"] = experiment_config_to_json(cfg);
    mj["status"] = manifest.all_ok ? "ok" : "partial-failure";
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& entry : manifest.cells) {
        nlohmann::json e;
        e["num_classes"] = entry.spec.num_classes;
        e["shots"] = entry.spec.shots;
        e["seed_index"] = entry.spec.seed_index;
        e["path"] = entry.path;
        e["wall_ms"] = entry.wall_ms;
        e["status"] = entry.status;
        cells.push_back(std::move(e));
    }
    mj["cells"] = std::move(cells);
    detail::write_json_file(mj, cfg.output_dir + "/manifest.json");
    return manifest;
}

// ---- reporting --------------------------------------------------------------

struct SummaryRow {
    std::size_t num_classes = 0;
    std::size_t shots = 0;
    std::size_t seed_index = 0;
    std::string attack;
    double fpr = 0.0;
    double achieved_fpr = 0.0;
    double tpr = 0.0;
    long long tp = 0;
    long long fp = 0;
    double ci_low = 0.0;
    double ci_high = 1.0;
};

struct AggregateRow {
    std::size_t num_classes = 0;
    std::size_t shots = 0;
    std::string attack;
    double fpr = 0.0;
    std::size_t num_seeds = 0;
    double median_tpr = 0.0;
    double median_gap = 0.0;  // median_tpr - fpr
    double ci_low_min = 0.0;
    double ci_high_max = 1.0;
};

struct RunReport {
    std::vector<SummaryRow> summary;
    std::vector<AggregateRow> aggregate;
};

// Reads a run directory (manifest + cells) back into flat per-seed rows and
// per-(C, S, attack, fpr) medians with interval envelopes.
inline RunReport load_run_report(const std::string& run_dir) {
    const nlohmann::json manifest = detail::load_json_file(run_dir + "/manifest.json");
    if (!manifest.contains("format") || manifest["format"] != "run-manifest")
        throw std::runtime_error(run_dir + "/manifest.json: not a run manifest");

    RunReport report;
    std::map<std::tuple<std::size_t, std::size_t, std::string, double>,
             std::pair<std::vector<double>, std::vector<ClopperPearsonInterval>>>
        groups;
    for (const auto& entry : manifest.at("cells")) {
        if (entry.at("status").get<std::string>() != "ok") continue;
        const nlohmann::json cell =
            detail::load_json_file(run_dir + "/" + entry.at("path").get<std::string>());
        for (const auto& [attack, a] : cell.at("attacks").items()) {
            for (const auto& row : a.at("tpr_at")) {
                SummaryRow s;
                s.num_classes = cell.at("num_classes").get<std::size_t>();
                s.shots = cell.at("shots").get<std::size_t>();
                s.seed_index = cell.at("seed_index").get<std::size_t>();
                s.attack = attack;
                s.fpr = row.at("requested_fpr").get<double>();
                s.achieved_fpr = row.at("achieved_fpr").get<double>();
                s.tpr = row.at("tpr").get<double>();
                s.tp = row.at("tp").get<long long>();
                s.fp = row.at("fp").get<long long>();
                const auto& ci = row.at("interval");
                s.ci_low = ci.at("low").get<double>();
                s.ci_high = ci.at("high").get<double>();
                report.summary.push_back(s);

                ClopperPearsonInterval interval;
                interval.tp = s.tp;
                interval.p = ci.at("p").get<long long>();
                interval.confidence = ci.at("confidence").get<double>();
                interval.low = s.ci_low;
                interval.high = s.ci_high;
                auto& group = groups[{s.num_classes, s.shots, s.attack, s.fpr}];
                group.first.push_back(s.tpr);
                group.second.push_back(interval);
            }
        }
    }
    for (const auto& [key, group] : groups) {
        SeedAggregate agg = aggregate_seeds(group.first, group.second);
        AggregateRow r;
        r.num_classes = std::get<0>(key);
        r.shots = std::get<1>(key);
        r.attack = std::get<2>(key);
        r.fpr = std::get<3>(key);
        r.num_seeds = group.first.size();
        r.median_tpr = agg.median;
        r.median_gap = agg.median - r.fpr;
        r.ci_low_min = agg.ci_low_min;
        r.ci_high_max = agg.ci_high_max;
        report.aggregate.push_back(r);
    }
    return report;
}

// Writes summary.csv (per seed) and aggregate.csv (medians, envelopes, and
// the log-log columns the slope checks consume; log10 of nonpositive gaps is
// written as nan).
inline void write_run_report(const RunReport& report, const std::string& run_dir) {
    {
        std::ofstream out(run_dir + "/summary.csv");
        if (!out) throw std::runtime_error("cannot open " + run_dir + "/summary.csv for writing");
        out << "num_classes,shots,seed_index,attack,fpr,achieved_fpr,tpr,tp,fp,ci_low,ci_high\n";
        out << std::setprecision(17);
        for (const auto& s : report.summary)
            out << s.num_classes << ',' << s.shots << ',' << s.seed_index << ',' << s.attack << ','
                << s.fpr << ',' << s.achieved_fpr << ',' << s.tpr << ',' << s.tp << ',' << s.fp
                << ',' << s.ci_low << ',' << s.ci_high << '\n';
    }
    {
        std::ofstream out(run_dir + "/aggregate.csv");
        if (!out) throw std::runtime_error("cannot open " + run_dir + "/aggregate.csv for writing");
        out << "num_classes,shots,attack,fpr,num_seeds,median_tpr,median_gap,ci_low_min,"
               "ci_high_max,log10_shots,log10_median_gap\n";
        out << std::setprecision(17);
        for (const auto& r : report.aggregate) {
            out << r.num_classes << ',' << r.shots << ',' << r.attack << ',' << r.fpr << ','
                << r.num_seeds << ',' << r.median_tpr << ',' << r.median_gap << ',' << r.ci_low_min
                << ',' << r.ci_high_max << ',' << std::log10(static_cast<double>(r.shots)) << ',';
            if (r.median_gap > 0.0) out << std::log10(r.median_gap);
            else out << "nan";
            out << '\n';
        }
    }
}

// Slope of log10(median gap) against log10(shots) for one attack at one fpr,
// over aggregate rows with positive gaps. Needs >= 3 usable points.
inline double gap_slope(const std::vector<AggregateRow>& aggregate, const std::string& attack,
                        double fpr) {
    std::vector<double> xs, ys;
    for (const auto& r : aggregate) {
        if (r.attack != attack || !detail::fpr_matches(r.fpr, fpr) || !(r.median_gap > 0.0))
            continue;
        xs.push_back(std::log10(static_cast<double>(r.shots)));
        ys.push_back(std::log10(r.median_gap));
    }
    if (xs.size() < 3) throw std::runtime_error("gap_slope: need >= 3 points with positive gaps");
    Matrix design(xs.size(), 2);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        design(i, 0) = xs[i];
        design(i, 1) = 1.0;
    }
    return ols_fit(design, ys).coefficients[0];
}

// ---- per-example evaluation ---------------------------------------------------

// TPR@FPR of single examples, measured across target models rather than
// pooled: for each requested example, its score under every target model is
// classified against that example's own membership column.
inline std::map<std::size_t, AttackResult> per_example_attack(
    const ScoreMatrix& matrix, const AttackConfig& config,
    const std::vector<std::size_t>& examples, const std::vector<double>& fprs,
    std::uint64_t seed = 0) {
    for (std::size_t e : examples)
        if (e >= matrix.num_examples)
            throw std::invalid_argument("per_example_attack: example index out of range");
    std::map<std::size_t, std::vector<double>> scores;
    std::map<std::size_t, std::vector<std::uint8_t>> labels;
    for (std::size_t e : examples) {
        scores[e].reserve(matrix.num_models);
        labels[e].reserve(matrix.num_models);
    }
    if (config.attack == AttackKind::lira) {
        LiraContext ctx(matrix);
        for (std::size_t t = 0; t < matrix.num_models; ++t) {
            LiraScores s = ctx.scores_for_target(t, config);
            for (std::size_t e : examples) {
                scores[e].push_back(s.scores[e]);
                labels[e].push_back(matrix.is_member(e, t) ? 1 : 0);
            }
        }
    } else {
        for (std::size_t t = 0; t < matrix.num_models; ++t) {
            std::vector<std::size_t> z_pool;
            for (std::size_t i = 0; i < matrix.num_examples; ++i)
                if (!matrix.is_member(i, t)) z_pool.push_back(i);
            RmiaScores s = rmia_scores(matrix, t, z_pool, config, seed);
            for (std::size_t e : examples) {
                scores[e].push_back(s.scores[e]);
                labels[e].push_back(matrix.is_member(e, t) ? 1 : 0);
            }
        }
    }
    std::map<std::size_t, AttackResult> out;
    for (std::size_t e : examples) out[e] = roc_and_tpr(scores[e], labels[e], fprs);
    return out;
}

// ---- analytic tables ----------------------------------------------------------

struct AnalyticConfig {
    std::size_t dimension = 100;
    double in_class_std = 0.1;
    std::size_t num_classes = 2;
    std::vector<AnalyticKind> kinds = {AnalyticKind::average_case};
    std::vector<std::size_t> shots_list = {16, 64, 256};
    std::vector<double> levels = {0.1};  // fpr for the mean forms, alpha for the bound
    std::size_t num_x = 1000;
    std::size_t rmia_num_z = 2000;
    std::size_t per_example_count = 0;
    std::vector<std::size_t> small_fpr_shots;  // empty = skip the ratio table
    std::vector<double> small_fpr_levels;
    std::uint64_t seed = 1;
    std::string output_dir = "runs/analytic";

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw std::invalid_argument("config." + field + ": " + why);
        };
        if (dimension < 1) fail("dimension", "must be >= 1");
        if (!(in_class_std > 0.0)) fail("in_class_std", "must be > 0");
        if (num_classes < 1) fail("classes", "must be >= 1");
        if (shots_list.empty()) fail("shots", "list must be nonempty");
        for (auto s : shots_list)
            if (s < 2) fail("shots", "every value must be >= 2");
        if (levels.empty()) fail("levels", "list must be nonempty");
        for (auto f : levels)
            if (!(f > 0.0 && f < 1.0)) fail("levels", "values must lie in (0,1)");
        if (num_x < 100) fail("num_x", "must be >= 100");
        if (rmia_num_z < 1) fail("rmia_num_z", "must be >= 1");
        if (output_dir.empty()) fail("output_dir", "must be set");
        if (small_fpr_shots.empty() != small_fpr_levels.empty())
            fail("small_fpr", "shots and levels must be set together");
    }
};

inline AnalyticKind analytic_kind_from_string(const std::string& s) {
    if (s == "lira_exact") return AnalyticKind::lira_exact;
    if (s == "lira_loglaw") return AnalyticKind::lira_loglaw;
    if (s == "rmia_bound") return AnalyticKind::rmia_bound;
    if (s == "average_case") return AnalyticKind::average_case;
    throw std::invalid_argument("unknown analytic kind '" + s + "'");
}

inline const char* to_string(AnalyticKind k) {
    switch (k) {
        case AnalyticKind::lira_exact: return "lira_exact";
        case AnalyticKind::lira_loglaw: return "lira_loglaw";
        case AnalyticKind::rmia_bound: return "rmia_bound";
        case AnalyticKind::average_case: return "average_case";
    }
    return "unknown";
}

inline AnalyticConfig analytic_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"dimension", "in_class_std", "classes", "kinds", "shots", "levels", "num_x",
            "rmia_num_z", "per_example_count", "small_fpr_shots", "small_fpr_levels", "seed",
            "output_dir"});
    AnalyticConfig c;
    c.dimension = detail::get_field(j, "dimension", c.dimension);
    c.in_class_std = detail::get_field(j, "in_class_std", c.in_class_std);
    c.num_classes = detail::get_field(j, "classes", c.num_classes);
    if (j.contains("kinds")) {
        c.kinds.clear();
        for (const auto& k : j.at("kinds")) c.kinds.push_back(analytic_kind_from_string(k));
    }
    c.shots_list = detail::get_field(j, "shots", c.shots_list);
    c.levels = detail::get_field(j, "levels", c.levels);
    c.num_x = detail::get_field(j, "num_x", c.num_x);
    c.rmia_num_z = detail::get_field(j, "rmia_num_z", c.rmia_num_z);
    c.per_example_count = detail::get_field(j, "per_example_count", c.per_example_count);
    c.small_fpr_shots = detail::get_field(j, "small_fpr_shots", c.small_fpr_shots);
    c.small_fpr_levels = detail::get_field(j, "small_fpr_levels", c.small_fpr_levels);
    c.seed = detail::get_field(j, "seed", c.seed);
    c.output_dir = detail::get_field<std::string>(j, "output_dir", c.output_dir);
    c.validate();
    return c;
}

inline AnalyticConfig load_analytic_config(const std::string& path) {
    return analytic_config_from_json(detail::load_json_file(path));
}

// Emits average_case.csv over the (kind, shots, level) grid, optionally
// per_example.csv for sampled targets and small_fpr.csv for the ratio table.
inline void run_analytic(const AnalyticConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);

    SimplifiedModelConfig mc;
    mc.num_classes = cfg.num_classes;
    mc.dimension = cfg.dimension;
    mc.in_class_std = cfg.in_class_std;
    mc.pool_factor = 2;
    mc.seed = cfg.seed;

    std::ofstream avg(cfg.output_dir + "/average_case.csv");
    if (!avg) throw std::runtime_error("cannot open average_case.csv for writing");
    avg << "kind,num_classes,shots,level,tpr,gap,log_gap,loglaw_log_gap,expectation_term,mean_psi,"
           "unstable\n";
    avg << std::setprecision(17);
    for (AnalyticKind kind : cfg.kinds) {
        if (kind != AnalyticKind::average_case && kind != AnalyticKind::rmia_bound) continue;
        const AverageCaseKind ak =
            kind == AnalyticKind::rmia_bound ? AverageCaseKind::rmia : AverageCaseKind::lira;
        for (std::size_t S : cfg.shots_list) {
            mc.shots = S;
            for (double level : cfg.levels) {
                AverageCaseResult r =
                    average_case(ak, mc, level, cfg.num_x, cfg.rmia_num_z, cfg.seed);
                avg << to_string(kind) << ',' << cfg.num_classes << ',' << S << ',' << level << ','
                    << r.vulnerability.tpr << ',' << (r.vulnerability.tpr - level) << ','
                    << r.vulnerability.log_gap << ',' << r.loglaw_log_gap << ','
                    << r.expectation_term << ',' << r.mean_psi << ','
                    << (r.vulnerability.unstable ? 1 : 0) << '\n';
            }
        }
    }
    avg.close();

    if (cfg.per_example_count > 0) {
        mc.shots = cfg.shots_list.front();
        ZSampler sampler = ZSampler::from_config(mc);
        Rng rng(cfg.seed, 0x70657278ULL);  // per-example x stream
        std::ofstream per(cfg.output_dir + "/per_example.csv");
        if (!per) throw std::runtime_error("cannot open per_example.csv for writing");
        per << "example,x_class,kind,shots,level,tpr,gap,log_gap,loglaw_log_gap,psi,degenerate,"
               "unstable\n";
        per << std::setprecision(17);
        std::vector<double> x(cfg.dimension);
        for (std::size_t e = 0; e < cfg.per_example_count; ++e) {
            const std::size_t c =
                cfg.num_classes == 1
                    ? 0
                    : static_cast<std::size_t>(rng.next_below(cfg.num_classes));
            sampler.draw(c, rng, x.data());
            const std::vector<double> m(sampler.mean_of(c), sampler.mean_of(c) + cfg.dimension);
            for (AnalyticKind kind : cfg.kinds) {
                if (kind == AnalyticKind::average_case) continue;
                for (std::size_t S : cfg.shots_list) {
                    for (double level : cfg.levels) {
                        double tpr = 0, log_gap = 0, loglaw = 0, psi = 0;
                        bool degenerate = false, unstable = false;
                        if (kind == AnalyticKind::rmia_bound) {
                            RmiaBound b = rmia_bound_per_example(x, c, S, level, sampler,
                                                                 cfg.rmia_num_z, cfg.seed + e);
                            tpr = b.vulnerability.tpr;
                            log_gap = b.vulnerability.log_gap;
                            loglaw = b.log_gap_bound;
                            psi = b.terms.psi;
                            unstable = b.vulnerability.unstable;
                        } else {
                            AnalyticVulnerability v =
                                lira_tpr_simplified(x, m, S, cfg.in_class_std, level);
                            tpr = v.tpr;
                            log_gap = v.log_gap;
                            degenerate = v.degenerate;
                            loglaw = degenerate
                                         ? -std::numeric_limits<double>::infinity()
                                         : lira_loglaw(x, m, S, cfg.in_class_std, level);
                        }
                        per << e << ',' << c << ',' << to_string(kind) << ',' << S << ',' << level
                            << ',' << tpr << ',' << (tpr - level) << ',' << log_gap << ','
                            << loglaw << ',' << psi << ',' << (degenerate ? 1 : 0) << ','
                            << (unstable ? 1 : 0) << '\n';
                    }
                }
            }
        }
    }

    if (!cfg.small_fpr_shots.empty()) {
        std::vector<SmallFprRow> rows = small_fpr_validation(cfg.small_fpr_shots,
                                                             cfg.small_fpr_levels,
                                                             cfg.in_class_std, cfg.dimension,
                                                             cfg.seed);
        std::ofstream sf(cfg.output_dir + "/small_fpr.csv");
        if (!sf) throw std::runtime_error("cannot open small_fpr.csv for writing");
        sf << "shots,fpr,true_gap,approx_gap,ratio,degenerate\n";
        sf << std::setprecision(17);
        for (const auto& r : rows)
            sf << r.S << ',' << r.fpr << ',' << r.true_gap << ',' << r.approx_gap << ',' << r.ratio
               << ',' << (r.degenerate ? 1 : 0) << '\n';
    }
}

// ---- fit report ---------------------------------------------------------------

inline nlohmann::json fit_report_to_json(const PowerLawFit& fit, const double* test_r2_value) {
    nlohmann::json j;
    j["fpr"] = fit.fpr;
    j["form"] = to_string(fit.form);
    j["n_used"] = fit.n_used;
    j["n_dropped"] = fit.n_dropped;
    j["r2"] = fit.ols.r_squared;
    if (test_r2_value != nullptr) j["test_r2"] = *test_r2_value;
    const char* names[3] = {"beta_S", "beta_C", "beta_0"};
    nlohmann::json coeffs = nlohmann::json::array();
    for (std::size_t i = 0; i < 3; ++i) {
        nlohmann::json c;
        c["coeff"] = names[i];
        c["value"] = fit.ols.coefficients[i];
        c["std_error"] = fit.ols.standard_errors[i];
        c["t"] = fit.ols.t_values[i];
        c["p"] = fit.ols.p_values[i];
        c["ci_low"] = fit.ols.ci_low[i];
        c["ci_high"] = fit.ols.ci_high[i];
        coeffs.push_back(std::move(c));
    }
    j["coefficients"] = std::move(coeffs);
    return j;
}

}  // namespace miascope
