#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "numerics.hpp"
#include "rng.hpp"
#include "simmodel.hpp"

namespace miascope {

enum class AnalyticKind { lira_exact, lira_loglaw, rmia_bound, average_case };

struct AnalyticVulnerability {
    double fpr = 0.0;
    double tpr = 0.0;
    double log_gap = -std::numeric_limits<double>::infinity(); // ln(tpr - fpr) when positive
    AnalyticKind kind = AnalyticKind::lira_exact;
    bool degenerate = false; // zero separation, tpr pinned to fpr
    bool unstable = false;   // small-S regime where the bound is known to wobble
};

// Location-scale description of the score under the two membership
// hypotheses; sigma is shared across them.
struct LocationScalePair {
    double mu_in = 0.0;
    double mu_out = 0.0;
    double sigma = 1.0;
    StandardDistribution base = StandardDistribution::standard_normal;
};

namespace detail {

inline double cdf_clamped(StandardDistribution kind, double x) {
    if (kind == StandardDistribution::folded_standard_normal && x < 0.0) return 0.0;
    return dist_cdf(kind, x);
}

inline double set_log_gap(AnalyticVulnerability& v) {
    v.log_gap = v.tpr > v.fpr ? std::log(v.tpr - v.fpr)
                              : -std::numeric_limits<double>::infinity();
    return v.log_gap;
}

} // namespace detail

// Fixed-example power at a fixed false positive rate for the score-threshold
// test between the two location hypotheses. With a symmetric base this is
// cdf(quantile(fpr) + |mu_in - mu_out| / sigma).
inline AnalyticVulnerability lira_tpr_per_example(const LocationScalePair& pair, double fpr) {
    if (!(fpr > 0.0 && fpr < 1.0)) throw std::domain_error("lira_tpr_per_example: fpr must be in (0,1)");
    if (!(pair.sigma > 0.0)) throw std::domain_error("lira_tpr_per_example: sigma must be > 0");
    AnalyticVulnerability out;
    out.fpr = fpr;
    out.kind = AnalyticKind::lira_exact;
    double shift = (pair.mu_in - pair.mu_out) / pair.sigma;
    if (shift == 0.0) {
        out.tpr = fpr;
        out.degenerate = true;
        detail::set_log_gap(out);
        return out;
    }
    if (shift > 0.0)
        out.tpr = 1.0 - detail::cdf_clamped(pair.base, dist_quantile(pair.base, 1.0 - fpr) - shift);
    else
        out.tpr = detail::cdf_clamped(pair.base, dist_quantile(pair.base, fpr) - shift);
    detail::set_log_gap(out);
    return out;
}

// Vulnerability of a fixed example in the synthetic cluster world:
// tpr = Phi(Phi^-1(fpr) + |<x, x - m_x>| / (sqrt(S) s ||x||)).
inline AnalyticVulnerability lira_tpr_simplified(const std::vector<double>& x,
                                                 const std::vector<double>& m_x, std::size_t S,
                                                 double s, double fpr) {
    if (x.size() != m_x.size() || x.empty())
        throw std::invalid_argument("lira_tpr_simplified: shape mismatch");
    if (S < 2) throw std::domain_error("lira_tpr_simplified: S must be >= 2");
    if (!(s > 0.0)) throw std::domain_error("lira_tpr_simplified: s must be > 0");
    if (!(fpr > 0.0 && fpr < 1.0)) throw std::domain_error("lira_tpr_simplified: fpr must be in (0,1)");
    const std::size_t d = x.size();
    double xx = dot(x.data(), x.data(), d);
    if (!(xx > 0.0)) throw std::domain_error("lira_tpr_simplified: x must be nonzero");
    double gap = xx - dot(x.data(), m_x.data(), d); // <x, x - m_x>
    AnalyticVulnerability out;
    out.fpr = fpr;
    out.kind = AnalyticKind::lira_exact;
    if (gap == 0.0) {
        out.tpr = fpr;
        out.degenerate = true;
        detail::set_log_gap(out);
        return out;
    }
    double shift = std::fabs(gap) / (std::sqrt(static_cast<double>(S)) * s * std::sqrt(xx));
    out.tpr = normal_cdf(normal_quantile(fpr) + shift);
    detail::set_log_gap(out);
    return out;
}

// First-order tail expansion of the same quantity:
// ln(tpr - fpr) ~ -ln(S)/2 - Phi^-1(fpr)^2/2 + ln(|<x,x-m_x>| / (||x|| s sqrt(2 pi))).
inline double lira_loglaw(const std::vector<double>& x, const std::vector<double>& m_x,
                          std::size_t S, double s, double fpr) {
    if (x.size() != m_x.size() || x.empty()) throw std::invalid_argument("lira_loglaw: shape mismatch");
    if (S < 2) throw std::domain_error("lira_loglaw: S must be >= 2");
    if (!(s > 0.0)) throw std::domain_error("lira_loglaw: s must be > 0");
    if (!(fpr > 0.0 && fpr < 1.0)) throw std::domain_error("lira_loglaw: fpr must be in (0,1)");
    const std::size_t d = x.size();
    double xx = dot(x.data(), x.data(), d);
    if (!(xx > 0.0)) throw std::domain_error("lira_loglaw: x must be nonzero");
    double gap = std::fabs(xx - dot(x.data(), m_x.data(), d));
    if (gap == 0.0) return -std::numeric_limits<double>::infinity();
    double q = normal_quantile(fpr);
    return -0.5 * std::log(static_cast<double>(S)) - 0.5 * q * q +
           std::log(gap / (std::sqrt(xx) * s * std::sqrt(2.0 * M_PI)));
}

// Norm bound on the same expansion: |<x, x-m_x>| <= ||x|| ||x-m_x||.
inline double lira_loglaw_cap(const std::vector<double>& x, const std::vector<double>& m_x,
                              std::size_t S, double s, double fpr) {
    if (x.size() != m_x.size() || x.empty()) throw std::invalid_argument("lira_loglaw_cap: shape mismatch");
    const std::size_t d = x.size();
    double nd = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double t = x[i] - m_x[i];
        nd += t * t;
    }
    double q = normal_quantile(fpr);
    return -0.5 * std::log(static_cast<double>(S)) - 0.5 * q * q +
           std::log(std::sqrt(nd) / (s * std::sqrt(2.0 * M_PI)));
}

// Labeled draws from the synthetic cluster distribution, used as the z
// population for the pairwise bound.
struct ZSampler {
    std::size_t num_classes = 0;
    std::size_t dimension = 0;
    double in_class_std = 0.0;
    std::vector<double> means; // [C x d]

    static ZSampler from_config(const SimplifiedModelConfig& config) {
        config.validate();
        ZSampler sam;
        sam.num_classes = config.num_classes;
        sam.dimension = config.dimension;
        sam.in_class_std = config.in_class_std;
        Rng rng(config.seed, 0x6d65616eULL);
        sam.means = detail::orthonormal_means(config.num_classes, config.dimension, rng);
        return sam;
    }

    const double* mean_of(std::size_t c) const { return means.data() + c * dimension; }

    void draw(std::size_t c, Rng& rng, double* out) const {
        const double* m = mean_of(c);
        for (std::size_t i = 0; i < dimension; ++i) out[i] = m[i] + in_class_std * rng.next_normal();
    }
};

struct RmiaBoundTerms {
    double q_expectation = 0.0; // E_z|q|, pair statistic squared scale
    double A_expectation = 0.0; // E_z|A|, pair statistic linear scale
    double alpha = 0.0;
    double psi = 0.0;
    std::size_t samples_same = 0;
    std::size_t samples_diff = 0;
};

struct RmiaBound {
    AnalyticVulnerability vulnerability;
    RmiaBoundTerms terms;
    double log_gap_bound = 0.0; // -ln(S)/2 - Phi^-1(alpha)^2/2 + ln(psi / sqrt(pi/2))
};

// Upper bound on the pairwise attack's power at level alpha:
// tpr <= 1 - F(F^-1(1-alpha) - psi/(sqrt(S) s)), F the folded-normal cdf.
// psi is the ratio of same/different-class moment combinations estimated by
// stratified Monte Carlo over z with fixed-order accumulation.
inline RmiaBound rmia_bound_per_example(const std::vector<double>& x, std::size_t x_class,
                                        std::size_t S, double alpha, const ZSampler& sampler,
                                        std::size_t num_z = 10000, std::uint64_t seed = 1) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("rmia_bound: alpha must be in (0,1)");
    if (S < 2) throw std::domain_error("rmia_bound: S must be >= 2");
    if (num_z < 1) throw std::domain_error("rmia_bound: num_z must be >= 1");
    if (x_class >= sampler.num_classes) throw std::invalid_argument("rmia_bound: class out of range");
    if (x.size() != sampler.dimension) throw std::invalid_argument("rmia_bound: dimension mismatch");
    const std::size_t d = sampler.dimension;
    const std::size_t C = sampler.num_classes;
    const double s = sampler.in_class_std;
    const double* m_x = sampler.mean_of(x_class);

    double xx = dot(x.data(), x.data(), d);
    double norm_x = std::sqrt(xx);
    double gap_x = xx - dot(x.data(), m_x, d); // <x, x - m_x>
    double xm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double t = x[i] - m_x[i];
        xm2 += t * t;
    }
    double norm_xm = std::sqrt(xm2);

    Rng rng(seed, 0x7073692dULL, x_class); // "psi-" stream
    std::vector<double> z(d);

    // same-class stratum
    double num_same = 0.0, den_same = 0.0, q_same = 0.0, a_same = 0.0;
    for (std::size_t k = 0; k < num_z; ++k) {
        sampler.draw(x_class, rng, z.data());
        double zz = dot(z.data(), z.data(), d);
        double norm_z = std::sqrt(zz);
        double xz = dot(x.data(), z.data(), d);
        double diff2 = xx - 2.0 * xz + zz; // ||x - z||^2
        double diffn = std::sqrt(std::max(0.0, diff2));
        num_same += 2.0 * diff2;
        den_same += 2.0 * diffn;
        double gxx = (xx - xz) / norm_x;  // <x, x-z>/||x||
        double gzz = (xz - zz) / norm_z;  // <z, x-z>/||z||
        q_same += gxx * gxx + gzz * gzz;
        a_same += std::fabs(gxx + gzz);
    }
    num_same /= static_cast<double>(num_z);
    den_same /= static_cast<double>(num_z);
    q_same /= static_cast<double>(num_z);
    a_same /= static_cast<double>(num_z);

    // different-class stratum; skipped entirely when C = 1
    double num_diff = 0.0, den_diff = 0.0, q_diff = 0.0, a_diff = 0.0;
    std::size_t diff_draws = 0;
    if (C > 1) {
        for (std::size_t k = 0; k < num_z; ++k) {
            std::size_t other = static_cast<std::size_t>(rng.next_below(C - 1));
            if (other >= x_class) ++other;
            sampler.draw(other, rng, z.data());
            const double* m_z = sampler.mean_of(other);
            double zm2 = 0.0, zz = 0.0, zmz = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                double t = z[i] - m_z[i];
                zm2 += t * t;
                zz += z[i] * z[i];
                zmz += z[i] * t;
            }
            double norm_z = std::sqrt(zz);
            num_diff += xm2 + zm2;
            den_diff += norm_xm + std::sqrt(zm2);
            double gx = gap_x / norm_x;  // <x, x-m_x>/||x||
            double gz = zmz / norm_z;    // <z, z-m_z>/||z||
            q_diff += gx * gx + gz * gz;
            a_diff += std::fabs(gx + gz);
            ++diff_draws;
        }
        num_diff /= static_cast<double>(num_z);
        den_diff /= static_cast<double>(num_z);
        q_diff /= static_cast<double>(num_z);
        a_diff /= static_cast<double>(num_z);
    }

    double cm1 = static_cast<double>(C - 1);
    double psi_num = num_same + cm1 * num_diff;
    double psi_den = den_same + cm1 * den_diff;
    if (!(psi_den > 0.0)) throw std::runtime_error("rmia_bound: degenerate z sample");

    RmiaBound out;
    out.terms.alpha = alpha;
    out.terms.psi = psi_num / psi_den;
    out.terms.samples_same = num_z;
    out.terms.samples_diff = diff_draws;
    double sqrt_S = std::sqrt(static_cast<double>(S));
    out.terms.q_expectation = (q_same + cm1 * q_diff) / (static_cast<double>(C) * S * s * s);
    out.terms.A_expectation = (a_same + cm1 * a_diff) / (static_cast<double>(C) * sqrt_S * s);

    double shift = out.terms.psi / (sqrt_S * s);
    double arg = folded_normal_quantile(1.0 - alpha) - shift;
    out.vulnerability.fpr = alpha;
    out.vulnerability.kind = AnalyticKind::rmia_bound;
    out.vulnerability.tpr = arg <= 0.0 ? 1.0 : 1.0 - folded_normal_cdf(arg);
    out.vulnerability.unstable = S < 50; // small-S regime; treated as advisory
    detail::set_log_gap(out.vulnerability);
    double q = normal_quantile(alpha);
    out.log_gap_bound = -0.5 * std::log(static_cast<double>(S)) - 0.5 * q * q +
                        std::log(out.terms.psi / std::sqrt(M_PI / 2.0));
    return out;
}

struct AverageCaseResult {
    AnalyticVulnerability vulnerability; // Monte Carlo mean of the per-example value
    double loglaw_log_gap = 0.0;         // closed-form expansion of ln(mean tpr - fpr)
    double expectation_term = 0.0;       // the E[.] inside the expansion
    double mean_psi = 0.0;               // only set for the pairwise bound
};

enum class AverageCaseKind { lira, rmia };

// Population average of the per-example quantity over x drawn from the
// cluster distribution, with the matching log-law expansion:
// lira: E[<x,x-m_x> / (sqrt(2 pi) ||x|| s)], expansion at the given fpr;
// rmia: E[psi(x,C) / sqrt(2 pi)], expansion at the given alpha.

inline AverageCaseResult average_case(AverageCaseKind kind, const SimplifiedModelConfig& config,
                                      double fpr_or_alpha, std::size_t num_x,
                                      std::size_t rmia_num_z = 2000, std::uint64_t seed = 1) {
    if (num_x < 100) throw std::domain_error("average_case: num_x must be >= 100");
    if (!(fpr_or_alpha > 0.0 && fpr_or_alpha < 1.0))
        throw std::domain_error("average_case: level must be in (0,1)");
    config.validate();
    ZSampler sampler = ZSampler::from_config(config);
    const std::size_t d = config.dimension, C = config.num_classes, S = config.shots;
    const double s = config.in_class_std;

    Rng rng(seed, 0x61766778ULL); // "avgx" stream
    std::vector<double> x(d);
    double sum_tpr = 0.0, sum_eterm = 0.0, sum_psi = 0.0;
    for (std::size_t k = 0; k < num_x; ++k) {
        std::size_t c = C == 1 ? 0 : static_cast<std::size_t>(rng.next_below(C));
        sampler.draw(c, rng, x.data());
        if (kind == AverageCaseKind::lira) {
            const double* m = sampler.mean_of(c);
            std::vector<double> mvec(m, m + d);
            AnalyticVulnerability v = lira_tpr_simplified(x, mvec, S, s, fpr_or_alpha);
            sum_tpr += v.tpr;
            double xx = dot(x.data(), x.data(), d);
            double gap = xx - dot(x.data(), m, d);
            sum_eterm += gap / (std::sqrt(2.0 * M_PI) * std::sqrt(xx) * s);
        } else {
            RmiaBound b =
                rmia_bound_per_example(x, c, S, fpr_or_alpha, sampler, rmia_num_z, seed + 1 + k);
            sum_tpr += b.vulnerability.tpr;
            sum_psi += b.terms.psi;
            sum_eterm += b.terms.psi / std::sqrt(2.0 * M_PI);
        }
    }

    AverageCaseResult out;
    out.vulnerability.fpr = fpr_or_alpha;
    out.vulnerability.kind = AnalyticKind::average_case;
    out.vulnerability.tpr = sum_tpr / static_cast<double>(num_x);
    out.vulnerability.unstable = kind == AverageCaseKind::rmia && S < 50;
    detail::set_log_gap(out.vulnerability);
    out.expectation_term = sum_eterm / static_cast<double>(num_x);
    out.mean_psi = sum_psi / static_cast<double>(num_x);
    double q = normal_quantile(fpr_or_alpha);
    out.loglaw_log_gap = -0.5 * std::log(static_cast<double>(S)) - 0.5 * q * q +
                         std::log(out.expectation_term);
    return out;
}

struct SmallFprRow {
    std::size_t S = 0;
    double fpr = 0.0;
    double true_gap = 0.0;
    double approx_gap = 0.0;
    double ratio = 0.0; // approx / true
    bool degenerate = false;
};

// True vs first-order-approximated gap for one example drawn from the
// cluster distribution, across a grid of S and fpr values.
inline std::vector<SmallFprRow> small_fpr_validation(const std::vector<std::size_t>& S_grid,
                                                     const std::vector<double>& fprs, double s,
                                                     std::size_t d, std::uint64_t seed = 1) {
    if (!(s > 0.0) || d < 1) throw std::domain_error("small_fpr_validation: bad configuration");
    SimplifiedModelConfig config;
    config.num_classes = 1;
    config.shots = 2;
    config.dimension = d;
    config.in_class_std = s;
    config.seed = seed;
    ZSampler sampler = ZSampler::from_config(config);
    Rng rng(seed, 0x61766778ULL);
    std::vector<double> x(d);
    sampler.draw(0, rng, x.data());
    std::vector<double> m(sampler.mean_of(0), sampler.mean_of(0) + d);

    std::vector<SmallFprRow> rows;
    for (std::size_t S : S_grid) {
        for (double fpr : fprs) {
            SmallFprRow row;
            row.S = S;
            row.fpr = fpr;
            AnalyticVulnerability v = lira_tpr_simplified(x, m, S, s, fpr);
            row.degenerate = v.degenerate;
            row.true_gap = v.tpr - fpr;
            row.approx_gap = v.degenerate ? 0.0 : std::exp(lira_loglaw(x, m, S, s, fpr));
            row.ratio = row.true_gap > 0.0 ? row.approx_gap / row.true_gap : 0.0;
            rows.push_back(row);
        }
    }
    return rows;
}

} // namespace miascope
