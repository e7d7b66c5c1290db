#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rng.hpp"
#include "simmodel.hpp"
#include "stats.hpp"

namespace miascope {

// Per-example score of every model plus the membership mask: the substrate
// both attacks consume, whether simulated or ingested.
struct ScoreMatrix {
    std::size_t num_examples = 0; // N
    std::size_t num_models = 0;   // M
    std::vector<double> scores;          // [N x M] row-major
    std::vector<std::uint8_t> membership; // [N x M]
    std::vector<std::size_t> example_class;

    double score_at(std::size_t i, std::size_t m) const { return scores[i * num_models + m]; }
    bool is_member(std::size_t i, std::size_t m) const { return membership[i * num_models + m] != 0; }

    // every example needs enough columns on each side for sample variances
    void validate(std::size_t min_in = 2, std::size_t min_out = 2) const {
        if (scores.size() != num_examples * num_models ||
            membership.size() != num_examples * num_models ||
            example_class.size() != num_examples)
            throw std::invalid_argument("score matrix: shape mismatch");
        for (std::size_t i = 0; i < num_examples; ++i) {
            std::size_t in = 0;
            for (std::size_t m = 0; m < num_models; ++m) in += membership[i * num_models + m];
            std::size_t out = num_models - in;
            if (in < min_in || out < min_out)
                throw std::invalid_argument("score matrix: example " + std::to_string(i) + " has " +
                                            std::to_string(in) + " IN / " + std::to_string(out) +
                                            " OUT models, need >= " + std::to_string(min_in) + "/" +
                                            std::to_string(min_out));
        }
    }
};

enum class AttackKind { lira, rmia };
enum class VarianceMode { separate, shared };

struct AttackConfig {
    AttackKind attack = AttackKind::lira;
    VarianceMode variance_mode = VarianceMode::separate;
    double rmia_gamma = 2.0;     // gamma > 1
    std::size_t rmia_num_z = 0;  // 0 = min(10000, |z_pool|)
    double sigma_floor = 1e-9;

    void validate() const {
        if (!(rmia_gamma > 1.0)) throw std::invalid_argument("attack config: rmia_gamma must be > 1");
        if (!(sigma_floor > 0.0)) throw std::invalid_argument("attack config: sigma_floor must be > 0");
    }
};

// Balanced realization of the in-expectation-half shadow scheme: every
// example is IN exactly M/2 models.
inline std::vector<std::uint8_t> shadow_split(std::size_t num_examples, std::size_t num_models,
                                              std::uint64_t seed) {
    if (num_models < 4 || num_models % 2 != 0)
        throw std::invalid_argument("shadow_split: num_models must be even and >= 4");
    std::vector<std::uint8_t> mask(num_examples * num_models, 0);
    std::vector<std::uint8_t> row(num_models);
    for (std::size_t i = 0; i < num_examples; ++i) {
        Rng rng(seed, 0x73706c69ULL, i); // "spli" stream per example
        std::fill(row.begin(), row.begin() + num_models / 2, 1);
        std::fill(row.begin() + num_models / 2, row.end(), 0);
        rng.shuffle(row);
        std::copy(row.begin(), row.end(), mask.begin() + i * num_models);
    }
    return mask;
}

// Split that also keeps every model class-balanced: models are grouped in
// blocks of pool_factor columns, and within each block the class pool is
// dealt into disjoint S-sized training sets. Rows are IN exactly
// M/pool_factor models; columns hold exactly S members per class.
inline std::vector<std::uint8_t> stratified_shadow_split(const std::vector<std::size_t>& labels,
                                                         std::size_t num_classes,
                                                         std::size_t shots,
                                                         std::size_t num_models,
                                                         std::size_t pool_factor,
                                                         std::uint64_t seed) {
    if (pool_factor < 2) throw std::invalid_argument("stratified_shadow_split: pool_factor must be >= 2");
    if (num_models < 2 * pool_factor || num_models % pool_factor != 0)
        throw std::invalid_argument(
            "stratified_shadow_split: num_models must be a multiple of pool_factor, >= 2*pool_factor");
    const std::size_t n = labels.size();
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= num_classes) throw std::invalid_argument("stratified_shadow_split: label out of range");
        by_class[labels[i]].push_back(i);
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (by_class[c].size() != pool_factor * shots)
            throw std::invalid_argument("stratified_shadow_split: class " + std::to_string(c) +
                                        " holds " + std::to_string(by_class[c].size()) +
                                        " vectors, expected pool_factor*shots");

    std::vector<std::uint8_t> mask(n * num_models, 0);
    const std::size_t groups = num_models / pool_factor;
    for (std::size_t c = 0; c < num_classes; ++c) {
        Rng rng(seed, 0x73747261ULL, c); // "stra" stream per class
        auto& idx = by_class[c];
        for (std::size_t g = 0; g < groups; ++g) {
            rng.shuffle(idx);
            for (std::size_t slot = 0; slot < pool_factor; ++slot) {
                std::size_t model = g * pool_factor + slot;
                for (std::size_t k = 0; k < shots; ++k)
                    mask[idx[slot * shots + k] * num_models + model] = 1;
            }
        }
    }
    return mask;
}

// Score every pool vector against classifiers built from mask columns.
inline ScoreMatrix build_score_matrix(const SamplePool& pool,
                                      const std::vector<std::uint8_t>& membership,
                                      std::size_t num_models,
                                      std::size_t workers = 1) {
    const std::size_t n = pool.num_vectors();
    if (membership.size() != n * num_models)
        throw std::invalid_argument("build_score_matrix: membership shape mismatch");
    ScoreMatrix mat;
    mat.num_examples = n;
    mat.num_models = num_models;
    mat.membership = membership;
    mat.example_class = pool.labels;
    mat.scores.assign(n * num_models, 0.0);

    auto fill_columns = [&](std::size_t begin, std::size_t end) {
        std::vector<std::uint8_t> col(n);
        for (std::size_t m = begin; m < end; ++m) {
            for (std::size_t i = 0; i < n; ++i) col[i] = membership[i * num_models + m];
            ClusterClassifier clf = build_classifier(pool, col);
            for (std::size_t i = 0; i < n; ++i)
                mat.scores[i * num_models + m] =
                    model_score(pool.vector_at(i), pool.config.dimension, pool.labels[i], clf);
        }
    };
    if (workers <= 1) {
        fill_columns(0, num_models);
    } else {
        std::vector<std::thread> pool_threads;
        std::size_t chunk = (num_models + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            std::size_t b = w * chunk, e = std::min(num_models, b + chunk);
            if (b >= e) break;
            pool_threads.emplace_back(fill_columns, b, e);
        }
        for (auto& t : pool_threads) t.join();
    }
    return mat;
}

struct LiraScores {
    std::vector<double> scores; // log LR per example
    std::size_t clamped = 0;    // sigma values raised to the floor
};

// Leave-one-out LiRA over all targets reuses whole-row sums, so statistics
// for any excluded column cost O(1). Scores are shifted by a per-example
// anchor before squaring to keep the variance update well conditioned.
class LiraContext {
  public:
    explicit LiraContext(const ScoreMatrix& matrix) : mat_(matrix) {
        const std::size_t n = mat_.num_examples, m = mat_.num_models;
        anchor_.resize(n);
        sum_in_.assign(n, 0.0);
        sumsq_in_.assign(n, 0.0);
        n_in_.assign(n, 0);
        sum_out_.assign(n, 0.0);
        sumsq_out_.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = mat_.scores.data() + i * m;
            const std::uint8_t* mem = mat_.membership.data() + i * m;
            double anchor = row[0];
            anchor_[i] = anchor;
            double si = 0, qi = 0, so = 0, qo = 0;
            std::size_t ci = 0;
            for (std::size_t j = 0; j < m; ++j) {
                double t = row[j] - anchor;
                if (mem[j]) {
                    si += t;
                    qi += t * t;
                    ++ci;
                } else {
                    so += t;
                    qo += t * t;
                }
            }
            sum_in_[i] = si;
            sumsq_in_[i] = qi;
            n_in_[i] = ci;
            sum_out_[i] = so;
            sumsq_out_[i] = qo;
        }
    }

    LiraScores scores_for_target(std::size_t target, const AttackConfig& config) const {
        config.validate();
        const std::size_t n = mat_.num_examples, m = mat_.num_models;
        if (target >= m) throw std::invalid_argument("lira: target model out of range");
        LiraScores out;
        out.scores.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            double t = mat_.score_at(i, target) - anchor_[i];
            bool member = mat_.is_member(i, target);
            double si = sum_in_[i], qi = sumsq_in_[i];
            double so = sum_out_[i], qo = sumsq_out_[i];
            std::size_t ni = n_in_[i], no = m - n_in_[i];
            if (member) {
                si -= t;
                qi -= t * t;
                --ni;
            } else {
                so -= t;
                qo -= t * t;
                --no;
            }
            if (ni < 2 || no < 2)
                throw std::runtime_error("lira: example " + std::to_string(i) +
                                         " retains too few shadow columns");
            double mu_in = si / static_cast<double>(ni);
            double mu_out = so / static_cast<double>(no);
            double ss_in = std::max(0.0, qi - si * si / static_cast<double>(ni));
            double ss_out = std::max(0.0, qo - so * so / static_cast<double>(no));
            double var_in, var_out;
            if (config.variance_mode == VarianceMode::shared) {
                double pooled = (ss_in + ss_out) / static_cast<double>(ni + no - 2);
                var_in = var_out = pooled;
            } else {
                var_in = ss_in / static_cast<double>(ni - 1);
                var_out = ss_out / static_cast<double>(no - 1);
            }
            double sd_in = std::sqrt(var_in), sd_out = std::sqrt(var_out);
            if (sd_in < config.sigma_floor) {
                sd_in = config.sigma_floor;
                ++out.clamped;
            }
            if (sd_out < config.sigma_floor) {
                sd_out = config.sigma_floor;
                ++out.clamped;
            }
            double zi = (t - mu_in) / sd_in, zo = (t - mu_out) / sd_out;
            out.scores[i] = std::log(sd_out) - std::log(sd_in) + 0.5 * (zo * zo - zi * zi);
        }
        return out;
    }

  private:
    const ScoreMatrix& mat_;
    std::vector<double> anchor_, sum_in_, sumsq_in_, sum_out_, sumsq_out_;
    std::vector<std::size_t> n_in_;
};

inline LiraScores lira_scores(const ScoreMatrix& matrix, std::size_t target_model,
                              const AttackConfig& config) {
    return LiraContext(matrix).scores_for_target(target_model, config);
}

struct RmiaScores {
    std::vector<double> scores; // fraction of z with log LR >= log gamma
    std::size_t clamped = 0;
    std::size_t pairs_skipped = 0; // (x,z) pairs lacking both-side shadow columns
};

// Pairwise likelihood ratio against population points z, estimated from the
// shadow columns split by joint membership: A = {x IN, z OUT}, B = {z IN,
// x OUT}. Means are groupwise; each example's variance is pooled across A
// and B. Column sets are walked as 64-bit masks.
inline RmiaScores rmia_scores(const ScoreMatrix& matrix, std::size_t target_model,
                              const std::vector<std::size_t>& z_pool, const AttackConfig& config,
                              std::uint64_t seed = 0) {
    config.validate();
    const std::size_t n = matrix.num_examples, m = matrix.num_models;
    if (target_model >= m) throw std::invalid_argument("rmia: target model out of range");
    if (z_pool.empty()) throw std::invalid_argument("rmia: empty z_pool");
    for (std::size_t z : z_pool) {
        if (z >= n) throw std::invalid_argument("rmia: z index out of range");
        if (matrix.is_member(z, target_model))
            throw std::invalid_argument("rmia: z_pool example " + std::to_string(z) +
                                        " is a member of the target model");
    }

    const std::size_t words = (m + 63) / 64;
    std::vector<std::uint64_t> in_bits(n * words, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (matrix.membership[i * m + j]) in_bits[i * words + j / 64] |= 1ULL << (j % 64);
    std::vector<std::uint64_t> col_ok(words, ~0ULL);
    if (m % 64) col_ok[words - 1] = (1ULL << (m % 64)) - 1;
    col_ok[target_model / 64] &= ~(1ULL << (target_model % 64)); // shadows only

    std::size_t want = config.rmia_num_z == 0 ? std::min<std::size_t>(10000, z_pool.size())
                                              : std::min(config.rmia_num_z, z_pool.size());
    const double log_gamma = std::log(config.rmia_gamma);

    RmiaScores out;
    out.scores.assign(n, 0.0);
    std::vector<std::size_t> zs(z_pool);
    for (std::size_t x = 0; x < n; ++x) {
        Rng rng(seed, 0x726d6961ULL, target_model, x); // "rmia" stream per (target, x)
        // sample distinct z, skipping x itself
        std::size_t avail = zs.size();
        std::size_t take = std::min(want, avail);
        for (std::size_t k = 0; k < take; ++k) {
            std::size_t j = k + static_cast<std::size_t>(rng.next_below(avail - k));
            std::swap(zs[k], zs[j]);
        }
        const double tx = matrix.score_at(x, target_model);
        const std::uint64_t* xw = in_bits.data() + x * words;
        const double* xrow = matrix.scores.data() + x * m;
        std::size_t hits = 0, valid = 0;
        for (std::size_t k = 0; k < take; ++k) {
            std::size_t z = zs[k];
            if (z == x) continue;
            const std::uint64_t* zw = in_bits.data() + z * words;
            const double* zrow = matrix.scores.data() + z * m;
            double sa_x = 0, qa_x = 0, sa_z = 0, qa_z = 0;
            double sb_x = 0, qb_x = 0, sb_z = 0, qb_z = 0;
            std::size_t na = 0, nb = 0;
            for (std::size_t w = 0; w < words; ++w) {
                std::uint64_t both = col_ok[w];
                std::uint64_t a = xw[w] & ~zw[w] & both;
                std::uint64_t b = zw[w] & ~xw[w] & both;
                while (a) {
                    unsigned bit = static_cast<unsigned>(__builtin_ctzll(a));
                    a &= a - 1;
                    std::size_t col = w * 64 + bit;
                    double vx = xrow[col], vz = zrow[col];
                    sa_x += vx;
                    qa_x += vx * vx;
                    sa_z += vz;
                    qa_z += vz * vz;
                    ++na;
                }
                while (b) {
                    unsigned bit = static_cast<unsigned>(__builtin_ctzll(b));
                    b &= b - 1;
                    std::size_t col = w * 64 + bit;
                    double vx = xrow[col], vz = zrow[col];
                    sb_x += vx;
                    qb_x += vx * vx;
                    sb_z += vz;
                    qb_z += vz * vz;
                    ++nb;
                }
            }
            if (na < 2 || nb < 2) {
                ++out.pairs_skipped;
                continue;
            }
            double mu_xx = sa_x / na, mu_zx = sb_x / nb;
            double mu_xz = sa_z / na, mu_zz = sb_z / nb;
            double ss_x = std::max(0.0, qa_x - sa_x * sa_x / na) +
                          std::max(0.0, qb_x - sb_x * sb_x / nb);
            double ss_z = std::max(0.0, qa_z - sa_z * sa_z / na) +
                          std::max(0.0, qb_z - sb_z * sb_z / nb);
            double var_x = ss_x / static_cast<double>(na + nb - 2);
            double var_z = ss_z / static_cast<double>(na + nb - 2);
            if (var_x < config.sigma_floor * config.sigma_floor) {
                var_x = config.sigma_floor * config.sigma_floor;
                ++out.clamped;
            }
            if (var_z < config.sigma_floor * config.sigma_floor) {
                var_z = config.sigma_floor * config.sigma_floor;
                ++out.clamped;
            }
            double tz = zrow[target_model];
            double log_lr = (mu_xx - mu_zx) / (2.0 * var_x) * (2.0 * tx - mu_xx - mu_zx) +
                            (mu_xz - mu_zz) / (2.0 * var_z) * (2.0 * tz - mu_xz - mu_zz);
            ++valid;
            if (log_lr >= log_gamma) ++hits;
        }
        if (valid == 0)
            throw std::runtime_error("rmia: no usable (x,z) pairs for example " + std::to_string(x));
        out.scores[x] = static_cast<double>(hits) / static_cast<double>(valid);
    }
    return out;
}

struct TprAtFpr {
    double requested_fpr = 0.0;
    double achieved_fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
    long long tp = 0;
    long long fp = 0;
    ClopperPearsonInterval interval;
};

struct AttackResult {
    std::vector<double> per_example_score;
    std::vector<std::pair<double, double>> roc; // (fpr, tpr) step points, (0,0) .. (1,1)
    std::map<double, TprAtFpr> tpr_at;
    std::size_t clamped = 0;
    std::size_t pairs_skipped = 0;
    long long positives = 0;
    long long negatives = 0;
};

// ROC with strict-greater thresholds and tied scores grouped; no
// interpolation. For each requested FPR the threshold is the most liberal
// one whose achieved FPR stays at or below it.
inline AttackResult roc_and_tpr(const std::vector<double>& per_example_score,
                                const std::vector<std::uint8_t>& is_member,
                                const std::vector<double>& requested_fprs,
                                double confidence = 0.95) {
    const std::size_t n = per_example_score.size();
    if (is_member.size() != n) throw std::invalid_argument("roc_and_tpr: label length mismatch");
    long long pos = 0;
    for (auto b : is_member) pos += (b != 0);
    long long neg = static_cast<long long>(n) - pos;
    if (pos == 0 || neg == 0) throw std::invalid_argument("roc_and_tpr: need both classes present");
    for (double v : per_example_score)
        if (std::isnan(v)) throw std::invalid_argument("roc_and_tpr: NaN score");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return per_example_score[a] > per_example_score[b];
    });

    AttackResult out;
    out.per_example_score = per_example_score;
    out.positives = pos;
    out.negatives = neg;
    out.roc.emplace_back(0.0, 0.0);

    struct Point {
        double thresh;
        long long tp, fp;
    };
    std::vector<Point> points;
    long long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
        double v = per_example_score[order[i]];
        std::size_t j = i;
        while (j < n && per_example_score[order[j]] == v) {
            if (is_member[order[j]]) ++tp;
            else ++fp;
            ++j;
        }
        points.push_back({v, tp, fp});
        out.roc.emplace_back(static_cast<double>(fp) / neg, static_cast<double>(tp) / pos);
        i = j;
    }

    for (double f : requested_fprs) {
        if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("roc_and_tpr: fpr must be in (0,1)");
        TprAtFpr at;
        at.requested_fpr = f;
        at.threshold = std::numeric_limits<double>::infinity();
        for (const auto& pt : points) {
            double afpr = static_cast<double>(pt.fp) / neg;
            if (afpr <= f) {
                at.achieved_fpr = afpr;
                at.tpr = static_cast<double>(pt.tp) / pos;
                at.tp = pt.tp;
                at.fp = pt.fp;
                at.threshold = pt.thresh;
            } else {
                break;
            }
        }
        at.interval = clopper_pearson(at.tp, pos, confidence);
        out.tpr_at[f] = at;
    }
    return out;
}

// All-targets leave-one-out driver: per-target scores concatenated with
// their membership bits, optionally restricted to a subset of target models.
struct LooOutcome {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::size_t clamped = 0;
    std::size_t pairs_skipped = 0;
};

inline LooOutcome leave_one_out_scores(const ScoreMatrix& matrix, const AttackConfig& config,
                                       const std::vector<std::size_t>& targets,
                                       std::uint64_t seed = 0) {
    LooOutcome out;
    out.scores.reserve(targets.size() * matrix.num_examples);
    out.labels.reserve(targets.size() * matrix.num_examples);
    if (config.attack == AttackKind::lira) {
        LiraContext ctx(matrix);
        for (std::size_t t : targets) {
            LiraScores s = ctx.scores_for_target(t, config);
            out.clamped += s.clamped;
            for (std::size_t i = 0; i < matrix.num_examples; ++i) {
                out.scores.push_back(s.scores[i]);
                out.labels.push_back(matrix.is_member(i, t) ? 1 : 0);
            }
        }
    } else {
        for (std::size_t t : targets) {
            std::vector<std::size_t> z_pool;
            for (std::size_t i = 0; i < matrix.num_examples; ++i)
                if (!matrix.is_member(i, t)) z_pool.push_back(i);
            RmiaScores s = rmia_scores(matrix, t, z_pool, config, seed);
            out.clamped += s.clamped;
            out.pairs_skipped += s.pairs_skipped;
            for (std::size_t i = 0; i < matrix.num_examples; ++i) {
                out.scores.push_back(s.scores[i]);
                out.labels.push_back(matrix.is_member(i, t) ? 1 : 0);
            }
        }
    }
    return out;
}

inline std::vector<std::size_t> all_models(const ScoreMatrix& matrix) {
    std::vector<std::size_t> v(matrix.num_models);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace miascope
