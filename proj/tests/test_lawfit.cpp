#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "miascope/lawfit.hpp"
#include "miascope/rng.hpp"

using namespace miascope;

namespace {

std::filesystem::path write_temp_csv(const std::string& stem, const std::string& content) {
    std::filesystem::path path = std::filesystem::temp_directory_path() / (stem + ".csv");
    std::ofstream out(path);
    out << content;
    return path;
}

VulnerabilityRecord make_record(double C, double S, double fpr, double tpr) {
    VulnerabilityRecord r;
    r.dataset_name = "synthetic";
    r.num_classes = C;
    r.shots = S;
    r.fpr = fpr;
    r.tpr = tpr;
    r.source = RecordSource::simulation;
    return r;
}

// Noiseless law: log10(tpr - fpr) = -0.5 log10 S + 0.25 log10 C - 1.
std::vector<VulnerabilityRecord> synthetic_records(double fpr) {
    std::vector<VulnerabilityRecord> records;
    for (double C : {2.0, 10.0, 100.0}) {
        for (double S : {1.0, 10.0, 100.0, 1000.0}) {
            double gap = std::pow(10.0, -0.5 * std::log10(S) + 0.25 * std::log10(C) - 1.0);
            records.push_back(make_record(C, S, fpr, fpr + gap));
        }
    }
    return records;
}

}  // namespace

TEST_CASE("bundled shots table fits the published law at deep fpr", "[lawfit]") {
    auto records = load_bundled_table("vitb_head_shots");
    PowerLawFit fit = fit_power_law(records, 0.001, LawForm::gap);
    REQUIRE(fit.n_used == 36);
    REQUIRE(fit.n_dropped == 0);
    REQUIRE_THAT(fit.beta_shots, Catch::Matchers::WithinAbs(-0.5823714376360019, 1e-8));
    REQUIRE_THAT(fit.beta_classes, Catch::Matchers::WithinAbs(0.2620670041967049, 1e-8));
    REQUIRE_THAT(fit.beta_intercept, Catch::Matchers::WithinAbs(-0.23498069205911762, 1e-8));
    REQUIRE_THAT(fit.ols.standard_errors[0],
                 Catch::Matchers::WithinAbs(0.026198664185418403, 1e-8));
    REQUIRE_THAT(fit.ols.standard_errors[1],
                 Catch::Matchers::WithinAbs(0.04863583512609504, 1e-8));
    REQUIRE_THAT(fit.ols.standard_errors[2],
                 Catch::Matchers::WithinAbs(0.10350405160138859, 1e-8));
    REQUIRE_THAT(fit.ols.r_squared, Catch::Matchers::WithinAbs(0.9738584264639272, 1e-10));

    // Published windows around the scaling exponents.
    REQUIRE_THAT(fit.beta_shots, Catch::Matchers::WithinAbs(-0.627, 0.05));
    REQUIRE_THAT(fit.beta_classes, Catch::Matchers::WithinAbs(0.300, 0.08));
    REQUIRE(fit.ols.r_squared >= 0.90);
    for (std::size_t j = 0; j < 3; ++j) {
        REQUIRE(fit.ols.ci_low[j] <= fit.ols.coefficients[j]);
        REQUIRE(fit.ols.ci_high[j] >= fit.ols.coefficients[j]);
    }
}

TEST_CASE("bundled shots table fits across fpr levels", "[lawfit]") {
    auto records = load_bundled_table("vitb_head_shots");

    PowerLawFit mild = fit_power_law(records, 0.1, LawForm::gap);
    REQUIRE_THAT(mild.beta_shots, Catch::Matchers::WithinAbs(-0.5006039782, 1e-8));
    REQUIRE_THAT(mild.beta_classes, Catch::Matchers::WithinAbs(0.0864340602, 1e-8));
    REQUIRE_THAT(mild.beta_intercept, Catch::Matchers::WithinAbs(0.3141974375, 1e-8));
    REQUIRE_THAT(mild.ols.r_squared, Catch::Matchers::WithinAbs(0.9731181680, 1e-8));
    REQUIRE_THAT(mild.beta_shots, Catch::Matchers::WithinAbs(-0.506, 0.05));
    REQUIRE_THAT(mild.beta_classes, Catch::Matchers::WithinAbs(0.090, 0.08));

    PowerLawFit mid = fit_power_law(records, 0.01, LawForm::gap);
    REQUIRE_THAT(mid.beta_shots, Catch::Matchers::WithinAbs(-0.5343195889, 1e-8));
    REQUIRE_THAT(mid.beta_classes, Catch::Matchers::WithinAbs(0.1703961744, 1e-8));
    REQUIRE_THAT(mid.ols.r_squared, Catch::Matchers::WithinAbs(0.9779014408, 1e-8));

    PowerLawFit only = fit_power_law(records, 0.1, LawForm::tpr_only);
    REQUIRE_THAT(only.beta_shots, Catch::Matchers::WithinAbs(-0.2476923510, 1e-8));
    REQUIRE_THAT(only.beta_classes, Catch::Matchers::WithinAbs(0.0613343617, 1e-8));
    REQUIRE_THAT(only.ols.r_squared, Catch::Matchers::WithinAbs(0.9314453294, 1e-8));

    PowerLawFit only_deep = fit_power_law(records, 0.001, LawForm::tpr_only);
    REQUIRE_THAT(only_deep.beta_shots, Catch::Matchers::WithinAbs(-0.5271103308, 1e-8));
    REQUIRE_THAT(only_deep.beta_classes, Catch::Matchers::WithinAbs(0.2584904602, 1e-8));
    REQUIRE_THAT(only_deep.ols.r_squared, Catch::Matchers::WithinAbs(0.9750352754, 1e-8));
}

TEST_CASE("fit transfers across architectures", "[lawfit]") {
    auto train = load_bundled_table("vitb_head_shots");
    auto test = load_bundled_table("r50_head_shots");
    PowerLawFit fit = fit_power_law(train, 0.001, LawForm::gap);
    double r2 = test_r2(fit, test);
    REQUIRE_THAT(r2, Catch::Matchers::WithinAbs(0.9644750022068282, 1e-8));
    REQUIRE(r2 >= 0.70);

    double mild = test_r2(fit_power_law(train, 0.1, LawForm::gap), test);
    REQUIRE_THAT(mild, Catch::Matchers::WithinAbs(0.9472248269, 1e-8));
}

TEST_CASE("every bundled table loads and validates", "[lawfit]") {
    for (const auto& name : bundled_table_names()) {
        auto records = load_bundled_table(name);
        REQUIRE_FALSE(records.empty());
        for (const auto& r : records) {
            REQUIRE_NOTHROW(r.validate());
            REQUIRE(r.source == RecordSource::bundled_table);
        }
    }

    try {
        load_bundled_table("nonsense");
        FAIL("expected unknown table to throw");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("available") != std::string::npos);
        REQUIRE(msg.find("vitb_head_shots") != std::string::npos);
    }
}

TEST_CASE("noiseless synthetic records are recovered exactly", "[lawfit]") {
    auto records = synthetic_records(0.01);
    PowerLawFit fit = fit_power_law(records, 0.01, LawForm::gap);
    REQUIRE(fit.n_used == 12);
    REQUIRE_THAT(fit.beta_shots, Catch::Matchers::WithinAbs(-0.5, 1e-12));
    REQUIRE_THAT(fit.beta_classes, Catch::Matchers::WithinAbs(0.25, 1e-12));
    REQUIRE_THAT(fit.beta_intercept, Catch::Matchers::WithinAbs(-1.0, 1e-12));
    REQUIRE_THAT(fit.ols.r_squared, Catch::Matchers::WithinAbs(1.0, 1e-12));

    // At a training point the prediction is the fitted value.
    const auto& r = records[5];
    REQUIRE_THAT(predict(fit, r.num_classes, r.shots),
                 Catch::Matchers::WithinAbs(r.tpr, 1e-12));
    REQUIRE_THAT(predict_log10_response(fit, r.num_classes, r.shots),
                 Catch::Matchers::WithinAbs(std::log10(r.tpr - r.fpr), 1e-12));
}

TEST_CASE("gap-form predictions approach the fpr from above", "[lawfit]") {
    PowerLawFit fit = fit_power_law(synthetic_records(0.01), 0.01, LawForm::gap);
    double prev = 1.0;
    for (double S : {1e2, 1e4, 1e6, 1e9, 1e12}) {
        double tpr = predict(fit, 10.0, S);
        REQUIRE(tpr >= 0.01);
        REQUIRE(tpr < prev);
        prev = tpr;
    }
    REQUIRE(prev - 0.01 < 1e-6);

    PowerLawFit saturated;
    saturated.fpr = 0.01;
    saturated.form = LawForm::gap;
    saturated.beta_intercept = 2.0;
    REQUIRE(predict(saturated, 10.0, 10.0) == 1.0);
    saturated.form = LawForm::tpr_only;
    REQUIRE(predict(saturated, 10.0, 10.0) == 1.0);

    REQUIRE_THROWS_AS(predict(fit, 0.5, 10.0), std::invalid_argument);
    REQUIRE_THROWS_AS(predict(fit, 10.0, 0.0), std::invalid_argument);
}

TEST_CASE("tpr-only form can predict below the fpr in the deep tail", "[lawfit]") {
    auto records = load_bundled_table("vitb_head_shots");
    PowerLawFit only = fit_power_law(records, 0.001, LawForm::tpr_only);
    REQUIRE(predict(only, 10.0, 1e9) < 0.001);
    PowerLawFit gap = fit_power_law(records, 0.001, LawForm::gap);
    REQUIRE(predict(gap, 10.0, 1e9) >= 0.001);
}

TEST_CASE("unusable records are dropped and counted", "[lawfit]") {
    auto records = synthetic_records(0.05);
    records.push_back(make_record(4.0, 32.0, 0.05, 0.05));   // zero gap
    records.push_back(make_record(4.0, 64.0, 0.05, 0.01));   // negative gap
    records.push_back(make_record(4.0, 64.0, 0.5, 0.9));     // other fpr
    PowerLawFit fit = fit_power_law(records, 0.05, LawForm::gap);
    REQUIRE(fit.n_used == 12);
    REQUIRE(fit.n_dropped == 2);

    // The zero-tpr record is unusable even for the tpr-only form.
    std::vector<VulnerabilityRecord> thin = {
        make_record(2.0, 1.0, 0.1, 0.0), make_record(2.0, 10.0, 0.1, 0.05),
        make_record(2.0, 100.0, 0.1, 0.02), make_record(4.0, 1.0, 0.1, 0.08)};
    try {
        fit_power_law(thin, 0.1, LawForm::tpr_only);
        FAIL("expected too-few-records error");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("dropped") != std::string::npos);
        REQUIRE(msg.find("4") != std::string::npos);
    }

    REQUIRE_THROWS_AS(fit_power_law(records, 0.0, LawForm::gap), std::invalid_argument);
}

TEST_CASE("record order does not change the fit", "[lawfit]") {
    auto records = load_bundled_table("vitb_head_shots");
    PowerLawFit base = fit_power_law(records, 0.001, LawForm::gap);

    std::vector<VulnerabilityRecord> shuffled = records;
    Rng rng(99);
    rng.shuffle(shuffled);
    PowerLawFit permuted = fit_power_law(shuffled, 0.001, LawForm::gap);
    REQUIRE(base.beta_shots == permuted.beta_shots);
    REQUIRE(base.beta_classes == permuted.beta_classes);
    REQUIRE(base.beta_intercept == permuted.beta_intercept);
    REQUIRE(base.ols.r_squared == permuted.ols.r_squared);
}

TEST_CASE("fpr matching tolerates rounding but not different levels", "[lawfit]") {
    std::vector<VulnerabilityRecord> records = synthetic_records(0.001);
    for (auto& r : records) r.fpr += 1e-10;
    PowerLawFit fit = fit_power_law(records, 0.001, LawForm::gap);
    REQUIRE(fit.n_used == 12);
    REQUIRE_THROWS_AS(fit_power_law(records, 0.0011, LawForm::gap), std::runtime_error);
}

TEST_CASE("csv loader reads well-formed records", "[lawfit]") {
    auto path = write_temp_csv("lawfit_good",
                               "dataset,C,S,fpr,tpr\n"
                               "cifar10,10,16,0.001,0.034\n"
                               "\n"
                               "eurosat, 10 , 64 , 0.001 , 0.012\n");
    auto records = load_vulnerability_csv(path.string(), RecordSource::simulation);
    REQUIRE(records.size() == 2);
    REQUIRE(records[0].dataset_name == "cifar10");
    REQUIRE(records[0].num_classes == 10.0);
    REQUIRE(records[0].shots == 16.0);
    REQUIRE(records[0].fpr == 0.001);
    REQUIRE(records[0].tpr == 0.034);
    REQUIRE(records[0].source == RecordSource::simulation);
    REQUIRE(records[1].dataset_name == "eurosat");
    REQUIRE(records[1].shots == 64.0);
    std::filesystem::remove(path);
}

TEST_CASE("csv loader names the offending line", "[lawfit]") {
    auto bad_header = write_temp_csv("lawfit_header", "a,b,c,d,e\nx,1,1,0.1,0.2\n");
    try {
        load_vulnerability_csv(bad_header.string());
        FAIL("expected header error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find(":1") != std::string::npos);
    }
    std::filesystem::remove(bad_header);

    auto bad_count = write_temp_csv("lawfit_count",
                                    "dataset,C,S,fpr,tpr\nx,1,1,0.1,0.2\nx,1,1,0.1\n");
    try {
        load_vulnerability_csv(bad_count.string());
        FAIL("expected field-count error");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        REQUIRE(msg.find(":3") != std::string::npos);
        REQUIRE(msg.find("5 fields") != std::string::npos);
    }
    std::filesystem::remove(bad_count);

    auto bad_number = write_temp_csv("lawfit_number",
                                     "dataset,C,S,fpr,tpr\nx,ten,16,0.1,0.2\n");
    try {
        load_vulnerability_csv(bad_number.string());
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        REQUIRE(msg.find(":2") != std::string::npos);
        REQUIRE(msg.find("cannot parse C") != std::string::npos);
    }
    std::filesystem::remove(bad_number);

    auto bad_range = write_temp_csv("lawfit_range", "dataset,C,S,fpr,tpr\nx,10,16,1.5,0.2\n");
    try {
        load_vulnerability_csv(bad_range.string());
        FAIL("expected range error");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        REQUIRE(msg.find(":2") != std::string::npos);
        REQUIRE(msg.find("fpr") != std::string::npos);
    }
    std::filesystem::remove(bad_range);

    auto empty = write_temp_csv("lawfit_empty", "");
    REQUIRE_THROWS_AS(load_vulnerability_csv(empty.string()), std::runtime_error);
    std::filesystem::remove(empty);

    auto header_only = write_temp_csv("lawfit_header_only", "dataset,C,S,fpr,tpr\n");
    REQUIRE_THROWS_AS(load_vulnerability_csv(header_only.string()), std::runtime_error);
    std::filesystem::remove(header_only);

    REQUIRE_THROWS_AS(load_vulnerability_csv("/nonexistent/never.csv"), std::runtime_error);
}

TEST_CASE("record specs resolve bundles and paths", "[lawfit]") {
    auto bundled = load_records("bundled:r50_head_shots");
    REQUIRE(bundled.size() == load_bundled_table("r50_head_shots").size());
    REQUIRE(bundled[0].source == RecordSource::bundled_table);

    auto path = write_temp_csv("lawfit_spec", "dataset,C,S,fpr,tpr\nx,10,16,0.1,0.3\n");
    auto from_path = load_records(path.string());
    REQUIRE(from_path.size() == 1);
    REQUIRE(from_path[0].source == RecordSource::ingested);
    std::filesystem::remove(path);

    REQUIRE_THROWS_AS(load_records("bundled:never"), std::invalid_argument);
}

TEST_CASE("data directory resolution prefers explicit over environment", "[lawfit]") {
    REQUIRE(resolve_data_dir("/tmp/explicit") == "/tmp/explicit");
    ::setenv("MIASCOPE_DATA_DIR", "/tmp/from_env", 1);
    REQUIRE(resolve_data_dir() == "/tmp/from_env");
    REQUIRE(resolve_data_dir("/tmp/explicit") == "/tmp/explicit");
    ::unsetenv("MIASCOPE_DATA_DIR");
    REQUIRE_FALSE(resolve_data_dir().empty());
}

TEST_CASE("out-of-sample r2 needs informative test data", "[lawfit]") {
    PowerLawFit fit = fit_power_law(synthetic_records(0.01), 0.01, LawForm::gap);
    std::vector<VulnerabilityRecord> one = {make_record(2.0, 10.0, 0.01, 0.1)};
    REQUIRE_THROWS_AS(test_r2(fit, one), std::runtime_error);
    std::vector<VulnerabilityRecord> flat = {make_record(2.0, 10.0, 0.01, 0.1),
                                             make_record(2.0, 10.0, 0.01, 0.1)};
    REQUIRE_THROWS_AS(test_r2(fit, flat), std::runtime_error);
}

TEST_CASE("record validation rejects out-of-range values", "[lawfit]") {
    REQUIRE_THROWS_AS(make_record(10, 16, 0.0, 0.5).validate(), std::invalid_argument);
    REQUIRE_THROWS_AS(make_record(10, 16, 0.1, 1.5).validate(), std::invalid_argument);
    REQUIRE_THROWS_AS(make_record(0, 16, 0.1, 0.5).validate(), std::invalid_argument);
    REQUIRE_THROWS_AS(make_record(10, 0, 0.1, 0.5).validate(), std::invalid_argument);
    REQUIRE_NOTHROW(make_record(10, 16, 0.1, 0.5).validate());
}
