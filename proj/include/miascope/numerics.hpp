#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace miascope {

// Standard score distributions used by the closed-form vulnerability
// expressions. The folded variant is the distribution of |t| for standard
// normal t: cdf(x) = 2 Phi(x) - 1 on x >= 0.
enum class StandardDistribution { standard_normal, folded_standard_normal };

inline double normal_cdf(double x) {
    if (!std::isfinite(x)) throw std::domain_error("normal_cdf: non-finite input");
    // 0.5 * erfc(-x/sqrt(2)); absolute error below 1e-12 across the real line
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

inline double normal_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0,1)");
    // rational initial estimate (Acklam), then Newton on the erfc-based cdf
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    double x;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // two Newton steps; pdf stays positive over the useful range of x
    for (int i = 0; i < 2; ++i) {
        double e = normal_cdf(x) - p;
        double dens = normal_pdf(x);
        if (dens <= 0.0) break;
        x -= e / dens;
    }
    return x;
}

inline double folded_normal_cdf(double x) {
    if (!std::isfinite(x) || x < 0.0) throw std::domain_error("folded_normal_cdf: x must be >= 0");
    return 2.0 * normal_cdf(x) - 1.0;
}

inline double folded_normal_quantile(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw std::domain_error("folded_normal_quantile: p must be in [0,1)");
    if (p == 0.0) return 0.0;
    return normal_quantile(0.5 * (1.0 + p));
}

inline double dist_cdf(StandardDistribution kind, double x) {
    return kind == StandardDistribution::standard_normal ? normal_cdf(x) : folded_normal_cdf(x);
}

inline double dist_quantile(StandardDistribution kind, double p) {
    return kind == StandardDistribution::standard_normal ? normal_quantile(p)
                                                         : folded_normal_quantile(p);
}

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz).
inline double beta_cont_frac(double a, double b, double x) {
    const double tiny = 1e-300;
    const double eps = 1e-16;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 400; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

} // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("incomplete_beta: a, b must be > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("incomplete_beta: x must be in [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * detail::beta_cont_frac(a, b, x) / a;
    return 1.0 - front * detail::beta_cont_frac(b, a, 1.0 - x) / b;
}

inline double beta_quantile(double q, double a, double b) {
    if (!(q > 0.0 && q < 1.0)) throw std::domain_error("beta_quantile: q must be in (0,1)");
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("beta_quantile: a, b must be > 0");
    // bracketed bisection on the monotone cdf; 100 halvings push the bracket
    // well below the 1e-10 tolerance on the cdf scale
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        if (incomplete_beta(mid, a, b) < q)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Student-t cdf/quantile via the incomplete beta; used for OLS intervals.
inline double student_t_cdf(double t, double dof) {
    if (!(dof > 0.0)) throw std::domain_error("student_t_cdf: dof must be > 0");
    if (t == 0.0) return 0.5;
    double u = dof / (dof + t * t);
    double half_tail = 0.5 * incomplete_beta(u, 0.5 * dof, 0.5);
    return t > 0.0 ? 1.0 - half_tail : half_tail;
}

inline double student_t_quantile(double p, double dof) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("student_t_quantile: p must be in (0,1)");
    if (p == 0.5) return 0.0;
    double tail = p > 0.5 ? 1.0 - p : p;
    double u = beta_quantile(2.0 * tail, 0.5 * dof, 0.5);
    double t = std::sqrt(dof * (1.0 - u) / u);
    return p > 0.5 ? t : -t;
}

// Dense row-major matrix, just large enough for the regression work here.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct OlsFit {
    std::vector<double> coefficients;
    std::vector<double> standard_errors;
    std::vector<double> t_values;
    std::vector<double> p_values;
    std::vector<double> ci_low;   // 95%, Student-t with residual dof
    std::vector<double> ci_high;
    double r_squared = 0.0;
    std::size_t residual_dof = 0;
    double residual_variance = 0.0;
};

// Least squares via Householder QR. The design matrix must include the
// intercept column explicitly when one is wanted; R^2 is centered.
inline OlsFit ols_fit(const Matrix& design, const std::vector<double>& response) {
    const std::size_t n = design.rows, k = design.cols;
    if (response.size() != n) throw std::invalid_argument("ols_fit: response length mismatch");
    if (n < k + 1) throw std::invalid_argument("ols_fit: too few rows for residual dof");

    Matrix qr = design;
    std::vector<double> y = response;
    std::vector<double> beta_diag(k, 0.0);

    for (std::size_t j = 0; j < k; ++j) {
        double norm = 0.0;
        for (std::size_t i = j; i < n; ++i) norm = std::hypot(norm, qr(i, j));
        if (norm == 0.0) throw std::runtime_error("ols_fit: rank-deficient design");
        if (qr(j, j) > 0.0) norm = -norm;
        for (std::size_t i = j; i < n; ++i) qr(i, j) /= -norm;
        qr(j, j) += 1.0;
        for (std::size_t col = j + 1; col < k; ++col) {
            double s = 0.0;
            for (std::size_t i = j; i < n; ++i) s += qr(i, j) * qr(i, col);
            s = -s / qr(j, j);
            for (std::size_t i = j; i < n; ++i) qr(i, col) += s * qr(i, j);
        }
        double s = 0.0;
        for (std::size_t i = j; i < n; ++i) s += qr(i, j) * y[i];
        s = -s / qr(j, j);
        for (std::size_t i = j; i < n; ++i) y[i] += s * qr(i, j);
        beta_diag[j] = norm;
    }

    double max_diag = 0.0;
    for (std::size_t j = 0; j < k; ++j) max_diag = std::max(max_diag, std::fabs(beta_diag[j]));
    for (std::size_t j = 0; j < k; ++j)
        if (std::fabs(beta_diag[j]) <= 1e-12 * max_diag)
            throw std::runtime_error("ols_fit: rank-deficient design");

    // back-substitute R beta = Q^T y; R has beta_diag on the diagonal and the
    // strict upper triangle of qr above it
    std::vector<double> coef(k, 0.0);
    for (std::size_t jj = k; jj-- > 0;) {
        double s = y[jj];
        for (std::size_t col = jj + 1; col < k; ++col) s -= qr(jj, col) * coef[col];
        coef[jj] = s / beta_diag[jj];
    }

    // residuals from the original system
    double rss = 0.0;
    double mean_y = 0.0;
    for (double v : response) mean_y += v;
    mean_y /= static_cast<double>(n);
    double tss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double fit = 0.0;
        for (std::size_t j = 0; j < k; ++j) fit += design(i, j) * coef[j];
        double r = response[i] - fit;
        rss += r * r;
        double c = response[i] - mean_y;
        tss += c * c;
    }

    // (X^T X)^-1 = R^-1 R^-T through the triangular inverse
    Matrix rinv(k, k);
    for (std::size_t j = 0; j < k; ++j) {
        rinv(j, j) = 1.0 / beta_diag[j];
        for (std::size_t i = j; i-- > 0;) {
            double s = 0.0;
            for (std::size_t l = i + 1; l <= j; ++l)
                s += qr(i, l) * rinv(l, j);
            rinv(i, j) = -s / beta_diag[i];
        }
    }

    OlsFit out;
    out.coefficients = coef;
    out.residual_dof = n - k;
    out.residual_variance = rss / static_cast<double>(n - k);
    out.r_squared = tss > 0.0 ? std::max(0.0, std::min(1.0, 1.0 - rss / tss)) : 1.0;
    out.standard_errors.resize(k);
    out.t_values.resize(k);
    out.p_values.resize(k);
    out.ci_low.resize(k);
    out.ci_high.resize(k);
    double tcrit = student_t_quantile(0.975, static_cast<double>(out.residual_dof));
    for (std::size_t j = 0; j < k; ++j) {
        double var = 0.0;
        for (std::size_t l = j; l < k; ++l) var += rinv(j, l) * rinv(j, l);
        double se = std::sqrt(out.residual_variance * var);
        out.standard_errors[j] = se;
        double tv = se > 0.0 ? coef[j] / se : std::numeric_limits<double>::infinity();
        out.t_values[j] = tv;
        out.p_values[j] = 2.0 * (1.0 - student_t_cdf(std::fabs(tv), static_cast<double>(out.residual_dof)));
        out.ci_low[j] = coef[j] - tcrit * se;
        out.ci_high[j] = coef[j] + tcrit * se;
    }
    return out;
}

} // namespace miascope
