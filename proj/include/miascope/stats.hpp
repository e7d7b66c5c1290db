#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "numerics.hpp"

namespace miascope {

struct ClopperPearsonInterval {
    long long tp = 0;
    long long p = 0;
    double confidence = 0.95;
    double low = 0.0;
    double high = 1.0;

    double half_width() const { return 0.5 * (high - low); }
};

// Exact binomial interval: low = B(alpha/2; tp, p-tp+1), high = B(1-alpha/2;
// tp+1, p-tp), with the conventional closures low=0 at tp=0, high=1 at tp=p.
inline ClopperPearsonInterval clopper_pearson(long long tp, long long p, double confidence = 0.95) {
    if (p < 1 || tp < 0 || tp > p) throw std::domain_error("clopper_pearson: need 0 <= tp <= p, p >= 1");
    if (!(confidence > 0.0 && confidence < 1.0))
        throw std::domain_error("clopper_pearson: confidence must be in (0,1)");
    double alpha = 1.0 - confidence;
    ClopperPearsonInterval out;
    out.tp = tp;
    out.p = p;
    out.confidence = confidence;
    out.low = tp == 0 ? 0.0
                      : beta_quantile(0.5 * alpha, static_cast<double>(tp),
                                      static_cast<double>(p - tp + 1));
    out.high = tp == p ? 1.0
                       : beta_quantile(1.0 - 0.5 * alpha, static_cast<double>(tp + 1),
                                       static_cast<double>(p - tp));
    return out;
}

struct SeedAggregate {
    std::vector<double> per_seed_values;
    double median = 0.0;
    double ci_low_min = 0.0;
    double ci_high_max = 1.0;
};

// Median of per-seed point values; interval envelope is the min of the lower
// bounds and max of the upper bounds. Even counts average the central pair.
inline SeedAggregate aggregate_seeds(const std::vector<double>& values,
                                     const std::vector<ClopperPearsonInterval>& intervals) {
    if (values.empty() || values.size() != intervals.size())
        throw std::domain_error("aggregate_seeds: need matching nonempty values and intervals");
    SeedAggregate out;
    out.per_seed_values = values;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::size_t n = sorted.size();
    out.median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    out.ci_low_min = intervals[0].low;
    out.ci_high_max = intervals[0].high;
    for (const auto& iv : intervals) {
        out.ci_low_min = std::min(out.ci_low_min, iv.low);
        out.ci_high_max = std::max(out.ci_high_max, iv.high);
    }
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw std::domain_error("median_of: empty input");
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace miascope
