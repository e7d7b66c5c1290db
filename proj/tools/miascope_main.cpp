// miascope: simulate membership-inference vulnerability, attack score
// matrices, evaluate closed forms, and fit the shots/classes power law.
// Exit codes: 0 success, 1 runtime or partial failure, 2 usage error.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "miascope/analytic.hpp"
#include "miascope/attacks.hpp"
#include "miascope/io.hpp"
#include "miascope/lawfit.hpp"
#include "miascope/pipeline.hpp"

namespace {

int cmd_simulate(const std::string& config_path, const std::string& output_dir,
                 std::size_t workers, bool quiet) {
    miascope::ExperimentConfig config = miascope::load_experiment_config(config_path);
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (workers > 0) config.workers = workers;
    config.validate();

    auto progress = [&](const miascope::CellOutcome& cell) {
        if (quiet) return;
        std::cerr << "cell C=" << cell.spec.num_classes << " S=" << cell.spec.shots
                  << " seed=" << cell.spec.seed_index << " done in " << cell.wall_ms << " ms\n";
    };
    miascope::RunManifest manifest = miascope::run_experiment(config, progress);

    miascope::RunReport report = miascope::load_run_report(config.output_dir);
    miascope::write_run_report(report, config.output_dir);

    std::size_t failed = 0;
    for (const auto& cell : manifest.cells)
        if (cell.status != "ok") {
            ++failed;
            std::cerr << "failed cell C=" << cell.spec.num_classes << " S=" << cell.spec.shots
                      << " seed=" << cell.spec.seed_index << ": " << cell.status << "\n";
        }
    std::cout << "run written to " << config.output_dir << " (" << manifest.cells.size()
              << " cells, " << failed << " failed)\n";
    return manifest.all_ok ? 0 : 1;
}

int cmd_analytic(const std::string& config_path, const std::string& output_dir) {
    miascope::AnalyticConfig config = miascope::load_analytic_config(config_path);
    if (!output_dir.empty()) config.output_dir = output_dir;
    config.validate();
    miascope::run_analytic(config);
    std::cout << "analytic tables written to " << config.output_dir << "\n";
    return 0;
}

int cmd_fit(const std::string& records_spec, double fpr, const std::string& form_name,
            const std::string& predict_on, const std::string& data_dir,
            const std::string& out_path) {
    const miascope::LawForm form =
        form_name == "gap" ? miascope::LawForm::gap : miascope::LawForm::tpr_only;
    const auto records = miascope::load_records(records_spec, data_dir);
    const miascope::PowerLawFit fit = miascope::fit_power_law(records, fpr, form);

    double test_value = 0.0;
    const double* test_ptr = nullptr;
    if (!predict_on.empty()) {
        const auto test_records = miascope::load_records(predict_on, data_dir);
        test_value = miascope::test_r2(fit, test_records);
        test_ptr = &test_value;
    }
    const nlohmann::json report = miascope::fit_report_to_json(fit, test_ptr);
    std::cout << report.dump(2) << "\n";
    if (!out_path.empty()) miascope::detail::write_json_file(report, out_path);
    return 0;
}

int cmd_ingest(const std::string& scores_path, const std::string& sidecar_path,
               const std::string& out_path) {
    const miascope::ScoreMatrix matrix = miascope::read_score_csv(scores_path, sidecar_path);
    std::size_t unbalanced = 0;
    for (std::size_t i = 0; i < matrix.num_examples; ++i) {
        std::size_t in = 0;
        for (std::size_t m = 0; m < matrix.num_models; ++m) in += matrix.is_member(i, m);
        const double frac = static_cast<double>(in) / static_cast<double>(matrix.num_models);
        if (frac < 0.25 || frac > 0.75) ++unbalanced;
    }
    if (unbalanced > 0)
        std::cerr << "warning: " << unbalanced << " of " << matrix.num_examples
                  << " examples have membership far from half the models\n";
    miascope::write_matrix_json(matrix, out_path);
    std::cout << "matrix with " << matrix.num_examples << " examples x " << matrix.num_models
              << " models written to " << out_path << "\n";
    return 0;
}

int cmd_attack(const std::string& matrix_path, const std::string& attack_name,
               const std::vector<double>& fprs, const std::string& variance_mode,
               double gamma, std::size_t num_z, std::size_t targets, std::uint64_t seed,
               bool no_scores, const std::string& out_path) {
    const miascope::ScoreMatrix matrix = miascope::read_matrix_json(matrix_path);
    matrix.validate();

    miascope::AttackConfig config;
    config.attack = miascope::attack_kind_from_string(attack_name);
    config.variance_mode = miascope::variance_mode_from_string(variance_mode);
    config.rmia_gamma = gamma;
    config.rmia_num_z = num_z;
    config.validate();

    const std::vector<std::size_t> target_models =
        miascope::select_targets(matrix.num_models,
                                 config.attack == miascope::AttackKind::rmia ? targets : 0);
    const miascope::LooOutcome loo =
        miascope::leave_one_out_scores(matrix, config, target_models, seed);
    miascope::AttackResult result = miascope::roc_and_tpr(loo.scores, loo.labels, fprs);
    result.clamped = loo.clamped;
    result.pairs_skipped = loo.pairs_skipped;

    miascope::write_attack_result(result, out_path, !no_scores);
    for (const auto& [fpr, at] : result.tpr_at)
        std::cout << "tpr@" << fpr << " = " << at.tpr << " [" << at.interval.low << ", "
                  << at.interval.high << "] (achieved fpr " << at.achieved_fpr << ")\n";
    std::cout << "attack result written to " << out_path << "\n";
    return 0;
}

int cmd_report(const std::string& run_dir) {
    const miascope::RunReport report = miascope::load_run_report(run_dir);
    miascope::write_run_report(report, run_dir);
    for (const auto& r : report.aggregate)
        std::cout << r.attack << " C=" << r.num_classes << " S=" << r.shots << " fpr=" << r.fpr
                  << " median tpr=" << r.median_tpr << " gap=" << r.median_gap << " ["
                  << r.ci_low_min << ", " << r.ci_high_max << "]\n";
    std::cout << "report tables written to " << run_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"membership-inference vulnerability simulator and audit toolkit"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "run a configured (classes, shots, seed) sweep");
    std::string sim_config;
    std::string sim_output;
    std::size_t sim_workers = 0;
    bool sim_quiet = false;
    sim->add_option("--config", sim_config, "experiment config JSON")->required();
    sim->add_option("--output-dir", sim_output, "override config output_dir");
    sim->add_option("--workers", sim_workers, "override worker count");
    sim->add_flag("--quiet", sim_quiet, "suppress per-cell progress");

    // analytic
    auto* ana = app.add_subcommand("analytic", "emit closed-form vulnerability tables");
    std::string ana_config;
    std::string ana_output;
    ana->add_option("--config", ana_config, "analytic config JSON")->required();
    ana->add_option("--output-dir", ana_output, "override config output_dir");

    // fit
    auto* fit = app.add_subcommand("fit", "fit the vulnerability power law");
    std::string fit_records;
    double fit_fpr = 0.001;
    std::string fit_form = "gap";
    std::string fit_predict;
    std::string fit_data_dir;
    std::string fit_out;
    fit->add_option("records", fit_records, "records CSV path or bundled:NAME")->required();
    fit->add_option("--fpr", fit_fpr, "fpr level to fit at")->required();
    fit->add_option("--form", fit_form, "gap or tpr-only")
        ->check(CLI::IsMember({"gap", "tpr-only"}));
    fit->add_option("--predict-on", fit_predict, "held-out records for test R^2");
    fit->add_option("--data-dir", fit_data_dir, "bundled table directory override");
    fit->add_option("--out", fit_out, "also write the report JSON here");

    // ingest
    auto* ing = app.add_subcommand("ingest", "validate and normalize a score matrix CSV");
    std::string ing_scores;
    std::string ing_sidecar;
    std::string ing_out;
    ing->add_option("--scores", ing_scores, "score CSV (example_id,model_id,is_member,score,class)")
        ->required();
    ing->add_option("--sidecar", ing_sidecar, "shape sidecar JSON")->required();
    ing->add_option("--out", ing_out, "normalized matrix JSON output")->required();

    // attack
    auto* att = app.add_subcommand("attack", "run an attack on a normalized score matrix");
    std::string att_matrix;
    std::string att_kind = "lira";
    std::vector<double> att_fprs = {0.1, 0.01, 0.001};
    std::string att_variance = "separate";
    double att_gamma = 2.0;
    std::size_t att_num_z = 0;
    std::size_t att_targets = 0;
    std::uint64_t att_seed = 0;
    bool att_no_scores = false;
    std::string att_out;
    att->add_option("--matrix", att_matrix, "normalized matrix JSON")->required();
    att->add_option("--attack", att_kind, "lira or rmia")->check(CLI::IsMember({"lira", "rmia"}));
    att->add_option("--fpr", att_fprs, "fpr levels to evaluate");
    att->add_option("--variance-mode", att_variance, "separate or shared")
        ->check(CLI::IsMember({"separate", "shared"}));
    att->add_option("--gamma", att_gamma, "pairwise ratio threshold (rmia)");
    att->add_option("--num-z", att_num_z, "population samples per example (rmia, 0 = default)");
    att->add_option("--targets", att_targets, "target model subset size (rmia, 0 = all)");
    att->add_option("--seed", att_seed, "sampling seed (rmia)");
    att->add_flag("--no-scores", att_no_scores, "omit per-example scores from the output");
    att->add_option("--out", att_out, "attack result JSON output")->required();

    // report
    auto* rep = app.add_subcommand("report", "aggregate a run directory into CSV tables");
    std::string rep_dir;
    rep->add_option("--run", rep_dir, "run directory containing manifest.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(sim_config, sim_output, sim_workers, sim_quiet);
        if (ana->parsed()) return cmd_analytic(ana_config, ana_output);
        if (fit->parsed())
            return cmd_fit(fit_records, fit_fpr, fit_form, fit_predict, fit_data_dir, fit_out);
        if (ing->parsed()) return cmd_ingest(ing_scores, ing_sidecar, ing_out);
        if (att->parsed())
            return cmd_attack(att_matrix, att_kind, att_fprs, att_variance, att_gamma, att_num_z,
                              att_targets, att_seed, att_no_scores, att_out);
        if (rep->parsed()) return cmd_report(rep_dir);
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
