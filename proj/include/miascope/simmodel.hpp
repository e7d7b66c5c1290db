#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace miascope {

// Synthetic world: C orthonormal true class means on the unit sphere, with
// pool_factor*S candidate vectors per class drawn N(m_c, s^2 I). Any trained
// model is the set of per-class means over a chosen S-per-class subset.
struct SimplifiedModelConfig {
    std::size_t num_classes = 2;   // C
    std::size_t shots = 16;        // S, members per class in any trained model
    std::size_t dimension = 32;    // d
    double in_class_std = 0.1;     // s
    std::size_t pool_factor = 2;   // candidates per class = pool_factor * S
    std::uint64_t seed = 1;

    void validate() const {
        if (num_classes < 1) throw std::invalid_argument("config: num_classes must be >= 1");
        if (shots < 2) throw std::invalid_argument("config: shots must be >= 2");
        if (dimension < num_classes)
            throw std::invalid_argument("config: dimension must be >= num_classes");
        if (!(in_class_std > 0.0)) throw std::invalid_argument("config: in_class_std must be > 0");
        if (pool_factor < 2) throw std::invalid_argument("config: pool_factor must be >= 2");
    }
};

struct SamplePool {
    SimplifiedModelConfig config;
    std::vector<double> vectors;     // [num_vectors() x d] row-major
    std::vector<std::size_t> labels; // class index per vector
    std::vector<double> true_means;  // [C x d] orthonormal rows

    std::size_t num_vectors() const { return labels.size(); }
    const double* vector_at(std::size_t i) const { return vectors.data() + i * config.dimension; }
    const double* mean_of(std::size_t c) const { return true_means.data() + c * config.dimension; }
};

struct ClusterClassifier {
    std::size_t num_classes = 0;
    std::size_t dimension = 0;
    std::vector<double> class_means;      // [C x d] row-major, r_c
    std::vector<std::uint8_t> membership; // per pool vector

    const double* mean_of(std::size_t c) const { return class_means.data() + c * dimension; }
};

inline double dot(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const double* a, std::size_t d) { return std::sqrt(dot(a, a, d)); }

namespace detail {

// First C columns of an orthogonalized Gaussian matrix: modified Gram-Schmidt
// with one re-orthogonalization pass, rows stored contiguously.
inline std::vector<double> orthonormal_means(std::size_t C, std::size_t d, Rng& rng) {
    std::vector<double> means(C * d);
    for (std::size_t c = 0; c < C; ++c) {
        double* row = means.data() + c * d;
        for (;;) {
            rng.fill_normal(row, d);
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t prev = 0; prev < c; ++prev) {
                    const double* q = means.data() + prev * d;
                    double proj = dot(row, q, d);
                    for (std::size_t i = 0; i < d; ++i) row[i] -= proj * q[i];
                }
            }
            double n = norm2(row, d);
            if (n > 1e-8) { // fresh Gaussian almost surely escapes the span
                for (std::size_t i = 0; i < d; ++i) row[i] /= n;
                break;
            }
        }
    }
    return means;
}

} // namespace detail

inline SamplePool generate_pool(const SimplifiedModelConfig& config) {
    config.validate();
    const std::size_t C = config.num_classes, d = config.dimension;
    const std::size_t per_class = config.pool_factor * config.shots;

    SamplePool pool;
    pool.config = config;
    Rng mean_rng(config.seed, 0x6d65616eULL); // "mean" stream
    pool.true_means = detail::orthonormal_means(C, d, mean_rng);

    pool.vectors.resize(C * per_class * d);
    pool.labels.resize(C * per_class);
    for (std::size_t c = 0; c < C; ++c) {
        Rng class_rng(config.seed, 0x706f6f6cULL, c); // "pool" stream per class
        const double* m = pool.mean_of(c);
        for (std::size_t k = 0; k < per_class; ++k) {
            std::size_t idx = c * per_class + k;
            double* v = pool.vectors.data() + idx * d;
            for (std::size_t i = 0; i < d; ++i)
                v[i] = m[i] + config.in_class_std * class_rng.next_normal();
            pool.labels[idx] = c;
        }
    }
    return pool;
}

// r_c = mean of the selected class-c vectors. The mask must select the same
// count per class; expected_per_class defaults to the pool's S.
inline ClusterClassifier build_classifier(const SamplePool& pool,
                                          const std::vector<std::uint8_t>& mask,
                                          std::size_t expected_per_class = 0) {
    const std::size_t C = pool.config.num_classes, d = pool.config.dimension;
    if (mask.size() != pool.num_vectors())
        throw std::invalid_argument("build_classifier: mask length mismatch");
    if (expected_per_class == 0) expected_per_class = pool.config.shots;

    ClusterClassifier clf;
    clf.num_classes = C;
    clf.dimension = d;
    clf.class_means.assign(C * d, 0.0);
    clf.membership = mask;
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t i = 0; i < pool.num_vectors(); ++i) {
        if (!mask[i]) continue;
        std::size_t c = pool.labels[i];
        const double* v = pool.vector_at(i);
        double* r = clf.class_means.data() + c * d;
        for (std::size_t j = 0; j < d; ++j) r[j] += v[j];
        ++counts[c];
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] != expected_per_class)
            throw std::invalid_argument("build_classifier: class " + std::to_string(c) +
                                        " selects " + std::to_string(counts[c]) + " vectors, expected " +
                                        std::to_string(expected_per_class));
        double* r = clf.class_means.data() + c * d;
        for (std::size_t j = 0; j < d; ++j) r[j] /= static_cast<double>(expected_per_class);
    }
    return clf;
}

// t_x = <x, r_label>, the own-class similarity used as the attack statistic.
inline double model_score(const double* x, std::size_t dim, std::size_t label,
                          const ClusterClassifier& clf) {
    if (dim != clf.dimension) throw std::invalid_argument("model_score: dimension mismatch");
    if (label >= clf.num_classes) throw std::invalid_argument("model_score: label out of range");
    return dot(x, clf.mean_of(label), dim);
}

inline double model_score(const std::vector<double>& x, std::size_t label,
                          const ClusterClassifier& clf) {
    return model_score(x.data(), x.size(), label, clf);
}

// Full score vector across classes, for exploratory use only; the attacks
// consume just the own-class entry.
inline std::vector<double> model_score_all_classes(const std::vector<double>& x,
                                                   const ClusterClassifier& clf) {
    if (x.size() != clf.dimension) throw std::invalid_argument("model_score: dimension mismatch");
    std::vector<double> out(clf.num_classes);
    for (std::size_t c = 0; c < clf.num_classes; ++c) out[c] = dot(x.data(), clf.mean_of(c), x.size());
    return out;
}

} // namespace miascope
