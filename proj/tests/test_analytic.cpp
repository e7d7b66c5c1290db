#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "miascope/analytic.hpp"
#include "miascope/attacks.hpp"
#include "miascope/numerics.hpp"
#include "miascope/rng.hpp"

using namespace miascope;

namespace {

LocationScalePair make_pair(double mu_in, double mu_out, double sigma) {
    LocationScalePair p;
    p.mu_in = mu_in;
    p.mu_out = mu_out;
    p.sigma = sigma;
    return p;
}

// x with ||x|| = 1.10454 and <x, x - m> = 0.12 by construction.
void engineered_example(std::vector<double>& x, std::vector<double>& m) {
    x = {1.10454, 0.0};
    m = {(x[0] * x[0] - 0.12) / x[0], 0.37};
}

double fit_slope(const std::vector<double>& lx, const std::vector<double>& ly) {
    Matrix design(lx.size(), 2);
    for (std::size_t i = 0; i < lx.size(); ++i) {
        design(i, 0) = lx[i];
        design(i, 1) = 1.0;
    }
    return ols_fit(design, ly).coefficients[0];
}

SimplifiedModelConfig cluster_config(std::size_t C, std::size_t S, std::size_t d, double s,
                                     std::uint64_t seed) {
    SimplifiedModelConfig cfg;
    cfg.num_classes = C;
    cfg.shots = S;
    cfg.dimension = d;
    cfg.in_class_std = s;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("per-example power reduces to the fpr without separation", "[analytic]") {
    AnalyticVulnerability v = lira_tpr_per_example(make_pair(0.7, 0.7, 2.0), 0.05);
    REQUIRE(v.tpr == 0.05);
    REQUIRE(v.degenerate);
    REQUIRE(std::isinf(v.log_gap));

    AnalyticVulnerability strong = lira_tpr_per_example(make_pair(100.0, 0.0, 1.0), 0.01);
    REQUIRE(strong.tpr >= 1.0 - 1e-12);
}

TEST_CASE("per-example power matches the closed form", "[analytic]") {
    AnalyticVulnerability v = lira_tpr_per_example(make_pair(0.10865, 0.0, 1.0), 0.1);
    REQUIRE_THAT(v.tpr, Catch::Matchers::WithinAbs(0.12041764084452730, 1e-12));
    REQUIRE_THAT(v.log_gap, Catch::Matchers::WithinAbs(std::log(v.tpr - 0.1), 1e-12));

    // Only the separation magnitude matters.
    AnalyticVulnerability flipped = lira_tpr_per_example(make_pair(0.0, 0.10865, 1.0), 0.1);
    REQUIRE_THAT(flipped.tpr, Catch::Matchers::WithinAbs(v.tpr, 1e-12));
    AnalyticVulnerability scaled = lira_tpr_per_example(make_pair(1.0865, 0.0, 10.0), 0.1);
    REQUIRE_THAT(scaled.tpr, Catch::Matchers::WithinAbs(v.tpr, 1e-12));
}

TEST_CASE("per-example power is monotone and bounded", "[analytic]") {
    double prev = 0.0;
    for (double gap : {0.0, 0.05, 0.2, 0.8, 2.0}) {
        AnalyticVulnerability v = lira_tpr_per_example(make_pair(gap, 0.0, 1.0), 0.1);
        REQUIRE(v.tpr >= 0.1);
        REQUIRE(v.tpr <= 1.0);
        REQUIRE(v.tpr >= prev);
        prev = v.tpr;
    }
}

TEST_CASE("per-example power under the folded base", "[analytic]") {
    LocationScalePair p = make_pair(0.5, 0.0, 1.0);
    p.base = StandardDistribution::folded_standard_normal;
    AnalyticVulnerability v = lira_tpr_per_example(p, 0.1);
    REQUIRE(v.tpr > 0.1);
    REQUIRE(v.tpr < 1.0);

    // A shift past the quantile saturates the clamped cdf.
    p.mu_in = 100.0;
    REQUIRE(lira_tpr_per_example(p, 0.1).tpr == 1.0);
}

TEST_CASE("per-example power rejects bad arguments", "[analytic]") {
    REQUIRE_THROWS_AS(lira_tpr_per_example(make_pair(1.0, 0.0, 0.0), 0.1), std::domain_error);
    REQUIRE_THROWS_AS(lira_tpr_per_example(make_pair(1.0, 0.0, 1.0), 0.0), std::domain_error);
    REQUIRE_THROWS_AS(lira_tpr_per_example(make_pair(1.0, 0.0, 1.0), 1.0), std::domain_error);
}

TEST_CASE("cluster-world power matches the engineered example", "[analytic]") {
    std::vector<double> x, m;
    engineered_example(x, m);
    AnalyticVulnerability v = lira_tpr_simplified(x, m, 100, 0.1, 0.1);
    REQUIRE_THAT(v.tpr, Catch::Matchers::WithinAbs(0.1204161392395873, 1e-9));
    REQUIRE_FALSE(v.degenerate);

    AnalyticVulnerability same = lira_tpr_simplified(x, x, 100, 0.1, 0.1);
    REQUIRE(same.tpr == 0.1);
    REQUIRE(same.degenerate);
}

TEST_CASE("cluster-world power decays as the square root of shots", "[analytic]") {
    std::vector<double> x, m;
    engineered_example(x, m);
    std::vector<double> ls, lgap;
    for (std::size_t S = 10000; S <= 160000; S *= 2) {
        AnalyticVulnerability v = lira_tpr_simplified(x, m, S, 0.1, 0.1);
        ls.push_back(std::log(static_cast<double>(S)));
        lgap.push_back(std::log(v.tpr - 0.1));
    }
    REQUIRE_THAT(fit_slope(ls, lgap), Catch::Matchers::WithinAbs(-0.5, 0.02));
}

TEST_CASE("cluster-world power is monotone in the useful directions", "[analytic]") {
    std::vector<double> x = {1.0, 0.5};
    double prev = 0.0;
    for (double pull : {0.0, 0.1, 0.3, 0.7}) {
        std::vector<double> m = {x[0] * (1.0 - pull), x[1] * (1.0 - pull)};
        double tpr = lira_tpr_simplified(x, m, 64, 0.1, 0.1).tpr;
        REQUIRE(tpr >= prev);
        prev = tpr;
    }

    std::vector<double> m = {0.8, 0.4};
    double prev_s = 1.1;
    for (std::size_t S : {16, 64, 256}) {
        double tpr = lira_tpr_simplified(x, m, S, 0.1, 0.1).tpr;
        REQUIRE(tpr < prev_s);
        prev_s = tpr;
    }
    double prev_noise = 1.1;
    for (double s : {0.05, 0.1, 0.2}) {
        double tpr = lira_tpr_simplified(x, m, 64, s, 0.1).tpr;
        REQUIRE(tpr < prev_noise);
        prev_noise = tpr;
    }
}

TEST_CASE("cluster-world power rejects bad arguments", "[analytic]") {
    std::vector<double> x = {1.0, 0.0}, m = {0.5, 0.0};
    REQUIRE_THROWS_AS(lira_tpr_simplified(x, {0.5}, 64, 0.1, 0.1), std::invalid_argument);
    REQUIRE_THROWS_AS(lira_tpr_simplified(x, m, 1, 0.1, 0.1), std::domain_error);
    REQUIRE_THROWS_AS(lira_tpr_simplified(x, m, 64, 0.0, 0.1), std::domain_error);
    REQUIRE_THROWS_AS(lira_tpr_simplified(x, m, 64, 0.1, 1.0), std::domain_error);
    REQUIRE_THROWS_AS(lira_tpr_simplified({0.0, 0.0}, m, 64, 0.1, 0.1), std::domain_error);
}

TEST_CASE("log-law expansion tracks the exact gap at large shots", "[analytic]") {
    std::vector<double> x, m;
    engineered_example(x, m);
    double prev_ratio = 0.0;
    for (std::size_t S : {16, 64, 256, 1024, 4096}) {
        AnalyticVulnerability v = lira_tpr_simplified(x, m, S, 0.1, 0.1);
        double ratio = std::exp(lira_loglaw(x, m, S, 0.1, 0.1)) / (v.tpr - 0.1);
        REQUIRE(ratio > prev_ratio);
        REQUIRE(ratio <= 1.02);
        prev_ratio = ratio;
    }
    REQUIRE(prev_ratio > 0.98);

    REQUIRE(std::isinf(lira_loglaw(x, x, 64, 0.1, 0.1)));
    // Smaller attack noise raises the expansion for a fixed example.
    REQUIRE(lira_loglaw(x, m, 64, 0.05, 0.1) > lira_loglaw(x, m, 64, 0.1, 0.1));
}

TEST_CASE("norm cap dominates the log-law expansion", "[analytic]") {
    Rng rng(6);
    for (int rep = 0; rep < 40; ++rep) {
        std::vector<double> x(10), m(10);
        rng.fill_normal(x.data(), 10);
        rng.fill_normal(m.data(), 10);
        double law = lira_loglaw(x, m, 64, 0.1, 0.01);
        double cap = lira_loglaw_cap(x, m, 64, 0.1, 0.01);
        REQUIRE(law <= cap + 1e-12);
    }

    // Equality when the mean is a scaling of the example.
    std::vector<double> x = {0.6, -0.3, 1.2};
    std::vector<double> m = {0.18, -0.09, 0.36};
    REQUIRE_THAT(lira_loglaw(x, m, 64, 0.1, 0.01),
                 Catch::Matchers::WithinAbs(lira_loglaw_cap(x, m, 64, 0.1, 0.01), 1e-12));
}

TEST_CASE("small-fpr table is internally consistent and deterministic", "[analytic]") {
    std::vector<std::size_t> S_grid = {10, 100, 10000};
    std::vector<double> fprs = {1e-5, 0.1};
    auto rows = small_fpr_validation(S_grid, fprs, 0.1, 100, 1);
    REQUIRE(rows.size() == S_grid.size() * fprs.size());
    for (const auto& row : rows) {
        REQUIRE(row.true_gap >= 0.0);
        REQUIRE(row.true_gap <= 1.0);
        if (row.true_gap > 0.0) {
            REQUIRE_THAT(row.ratio * row.true_gap,
                         Catch::Matchers::WithinRel(row.approx_gap, 1e-12));
        }
    }

    auto again = small_fpr_validation(S_grid, fprs, 0.1, 100, 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        REQUIRE(rows[i].true_gap == again[i].true_gap);
        REQUIRE(rows[i].approx_gap == again[i].approx_gap);
    }
}

TEST_CASE("small-fpr approximation sharpens as shots grow", "[analytic]") {
    auto rows = small_fpr_validation({10, 100, 1000, 10000, 100000}, {1e-5}, 0.1, 100, 1);
    for (std::size_t i = 1; i < rows.size(); ++i) REQUIRE(rows[i].ratio > rows[i - 1].ratio);
    // The deep-tail expansion underestimates at small S.
    REQUIRE(rows.front().ratio < 1.0);

    auto mild = small_fpr_validation({10000}, {0.1}, 0.1, 100, 1);
    REQUIRE(mild[0].ratio <= 1.02);
}

TEST_CASE("pairwise bound approaches the level as shots diverge", "[analytic]") {
    ZSampler sampler = ZSampler::from_config(cluster_config(2, 16, 20, 0.1, 3));
    std::vector<double> x(sampler.mean_of(0), sampler.mean_of(0) + 20);
    x[0] += 0.05;
    RmiaBound loose = rmia_bound_per_example(x, 0, 1000000000000ULL, 0.1, sampler, 2000, 5);
    REQUIRE_THAT(loose.vulnerability.tpr, Catch::Matchers::WithinAbs(0.1, 1e-4));
    REQUIRE(loose.vulnerability.tpr >= 0.1);

    RmiaBound tight = rmia_bound_per_example(x, 0, 100, 0.1, sampler, 2000, 5);
    RmiaBound tighter = rmia_bound_per_example(x, 0, 400, 0.1, sampler, 2000, 5);
    REQUIRE(tight.vulnerability.tpr > tighter.vulnerability.tpr);
    REQUIRE(tight.vulnerability.tpr <= 1.0);
    REQUIRE_FALSE(tight.vulnerability.unstable);
    REQUIRE(rmia_bound_per_example(x, 0, 10, 0.1, sampler, 500, 5).vulnerability.unstable);
}

TEST_CASE("pairwise bound terms scale with shots deterministically", "[analytic]") {
    ZSampler sampler = ZSampler::from_config(cluster_config(3, 16, 12, 0.1, 9));
    std::vector<double> x(sampler.mean_of(1), sampler.mean_of(1) + 12);
    x[3] -= 0.08;
    RmiaBound a = rmia_bound_per_example(x, 1, 64, 0.1, sampler, 3000, 7);
    RmiaBound b = rmia_bound_per_example(x, 1, 256, 0.1, sampler, 3000, 7);
    // Same seed reuses the same z stream, so the S-scaling is exact.
    REQUIRE_THAT(a.terms.q_expectation / b.terms.q_expectation,
                 Catch::Matchers::WithinRel(4.0, 1e-12));
    REQUIRE_THAT(a.terms.A_expectation / b.terms.A_expectation,
                 Catch::Matchers::WithinRel(2.0, 1e-12));
    REQUIRE(a.terms.psi == b.terms.psi);

    double q = normal_quantile(0.1);
    double expect_log_bound = -0.5 * std::log(64.0) - 0.5 * q * q +
                              std::log(a.terms.psi / std::sqrt(M_PI / 2.0));
    REQUIRE_THAT(a.log_gap_bound, Catch::Matchers::WithinAbs(expect_log_bound, 1e-12));

    RmiaBound again = rmia_bound_per_example(x, 1, 64, 0.1, sampler, 3000, 7);
    REQUIRE(a.terms.psi == again.terms.psi);
    REQUIRE(a.vulnerability.tpr == again.vulnerability.tpr);
}

TEST_CASE("pairwise bound psi matches the single-class closed form", "[analytic]") {
    // With one class and x at the mean, ||x - z|| is a scaled chi variable:
    // psi = s d Gamma(d/2) / (sqrt(2) Gamma((d+1)/2)).
    const std::size_t d = 50;
    ZSampler sampler = ZSampler::from_config(cluster_config(1, 16, d, 0.1, 4));
    std::vector<double> x(sampler.mean_of(0), sampler.mean_of(0) + d);
    RmiaBound b = rmia_bound_per_example(x, 0, 100, 0.1, sampler, 50000, 11);
    REQUIRE(b.terms.samples_diff == 0);
    REQUIRE_THAT(b.terms.psi, Catch::Matchers::WithinRel(0.7106509319069520, 0.005));
}

TEST_CASE("pairwise bound rejects bad arguments", "[analytic]") {
    ZSampler sampler = ZSampler::from_config(cluster_config(2, 16, 8, 0.1, 1));
    std::vector<double> x(8, 0.1);
    REQUIRE_THROWS_AS(rmia_bound_per_example(x, 0, 64, 0.0, sampler), std::domain_error);
    REQUIRE_THROWS_AS(rmia_bound_per_example(x, 0, 64, 1.0, sampler), std::domain_error);
    REQUIRE_THROWS_AS(rmia_bound_per_example(x, 0, 1, 0.1, sampler), std::domain_error);
    REQUIRE_THROWS_AS(rmia_bound_per_example(x, 0, 64, 0.1, sampler, 0), std::domain_error);
    REQUIRE_THROWS_AS(rmia_bound_per_example(x, 2, 64, 0.1, sampler), std::invalid_argument);
    std::vector<double> bad_dim(7, 0.1);
    REQUIRE_THROWS_AS(rmia_bound_per_example(bad_dim, 0, 64, 0.1, sampler),
                      std::invalid_argument);
}

TEST_CASE("pairwise bound dominates the empirical attack", "[analytic]") {
    const std::size_t C = 2, S = 64, d = 16, M = 64;
    SimplifiedModelConfig cfg = cluster_config(C, S, d, 0.1, 15);
    SamplePool pool = generate_pool(cfg);
    auto mask = stratified_shadow_split(pool.labels, C, S, M, cfg.pool_factor, 15);
    ScoreMatrix mat = build_score_matrix(pool, mask, M);

    ZSampler sampler = ZSampler::from_config(cfg);
    AttackConfig attack;
    attack.attack = AttackKind::rmia;
    attack.rmia_gamma = 1.0001;
    attack.rmia_num_z = 32;

    const std::vector<std::size_t> tracked = {0, 3};
    std::map<std::size_t, std::vector<double>> scores;
    std::map<std::size_t, std::vector<std::uint8_t>> labels;
    for (std::size_t t = 0; t < M; ++t) {
        std::vector<std::size_t> z_pool;
        for (std::size_t i = 0; i < mat.num_examples; ++i)
            if (!mat.is_member(i, t)) z_pool.push_back(i);
        RmiaScores s = rmia_scores(mat, t, z_pool, attack, 2);
        for (std::size_t e : tracked) {
            scores[e].push_back(s.scores[e]);
            labels[e].push_back(mat.is_member(e, t) ? 1 : 0);
        }
    }
    for (std::size_t e : tracked) {
        AttackResult res = roc_and_tpr(scores[e], labels[e], {0.1});
        std::vector<double> x(pool.vector_at(e), pool.vector_at(e) + d);
        RmiaBound bound = rmia_bound_per_example(x, pool.labels[e], S, 0.1, sampler, 4000, 21);
        REQUIRE(res.tpr_at[0.1].tpr <=
                bound.vulnerability.tpr + 3.0 * res.tpr_at[0.1].interval.half_width());
    }
}

TEST_CASE("average vulnerability decays at the square-root rate", "[analytic]") {
    SimplifiedModelConfig cfg = cluster_config(2, 16, 10, 0.1, 1);
    std::vector<double> ls, lgap;
    double prev_gap = 1.0;
    for (std::size_t S : {64, 128, 256, 512, 1024, 2048, 4096}) {
        cfg.shots = S;
        AverageCaseResult res = average_case(AverageCaseKind::lira, cfg, 0.1, 400);
        double gap = res.vulnerability.tpr - 0.1;
        REQUIRE(gap > 0.0);
        REQUIRE(gap < prev_gap);
        prev_gap = gap;
        ls.push_back(std::log(static_cast<double>(S)));
        lgap.push_back(std::log(gap));
        REQUIRE_THAT(res.loglaw_log_gap,
                     Catch::Matchers::WithinAbs(-0.5 * std::log(static_cast<double>(S)) -
                                                    0.5 * normal_quantile(0.1) *
                                                        normal_quantile(0.1) +
                                                    std::log(res.expectation_term),
                                                1e-12));
    }
    REQUIRE_THAT(fit_slope(ls, lgap), Catch::Matchers::WithinAbs(-0.5, 0.05));
}

TEST_CASE("average pairwise bound aggregates psi", "[analytic]") {
    SimplifiedModelConfig cfg = cluster_config(2, 64, 10, 0.1, 2);
    AverageCaseResult res = average_case(AverageCaseKind::rmia, cfg, 0.1, 100, 500, 3);
    REQUIRE(res.mean_psi > 0.0);
    REQUIRE_THAT(res.expectation_term,
                 Catch::Matchers::WithinRel(res.mean_psi / std::sqrt(2.0 * M_PI), 1e-12));
    REQUIRE(res.vulnerability.tpr > 0.1);
    REQUIRE(res.vulnerability.tpr <= 1.0);
    REQUIRE_FALSE(res.vulnerability.unstable);

    AverageCaseResult again = average_case(AverageCaseKind::rmia, cfg, 0.1, 100, 500, 3);
    REQUIRE(res.vulnerability.tpr == again.vulnerability.tpr);
    REQUIRE(res.mean_psi == again.mean_psi);

    cfg.shots = 16;
    REQUIRE(average_case(AverageCaseKind::rmia, cfg, 0.1, 100, 200, 3).vulnerability.unstable);
}

TEST_CASE("average vulnerability rejects bad arguments", "[analytic]") {
    SimplifiedModelConfig cfg = cluster_config(2, 16, 10, 0.1, 1);
    REQUIRE_THROWS_AS(average_case(AverageCaseKind::lira, cfg, 0.1, 50), std::domain_error);
    REQUIRE_THROWS_AS(average_case(AverageCaseKind::lira, cfg, 0.0, 400), std::domain_error);
    REQUIRE_THROWS_AS(average_case(AverageCaseKind::lira, cfg, 1.0, 400), std::domain_error);
}
