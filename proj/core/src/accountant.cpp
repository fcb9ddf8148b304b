#include "dpsgd/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpsgd/errors.hpp"

namespace dpsgd {

namespace {

double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

double log_binom(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Exact bound at integer alpha:
//   A = sum_j C(alpha, j) (1-q)^(alpha-j) q^j exp((j^2 - j) / (2 sigma^2))
//   eps = log(A) / (alpha - 1)
double sgm_rdp_int(double q, double sigma, std::uint64_t alpha) {
    const double log_q = std::log(q);
    const double log_1mq = std::log1p(-q);
    const double s2 = sigma * sigma;
    double log_a = -std::numeric_limits<double>::infinity();
    for (std::uint64_t j = 0; j <= alpha; ++j) {
        const double dj = static_cast<double>(j);
        const double term = log_binom(static_cast<double>(alpha), dj) +
                            (static_cast<double>(alpha) - dj) * log_1mq + dj * log_q +
                            (dj * dj - dj) / (2.0 * s2);
        log_a = log_add(log_a, term);
    }
    return log_a / (static_cast<double>(alpha) - 1.0);
}

struct MixtureArgs {
    double q;
    double sigma;
    double alpha;
};

// log of N(x; 0, sigma^2) * (mix(x)/N(x))^alpha where
// mix = (1-q) N(0, sigma^2) + q N(1, sigma^2); the likelihood ratio is
// (1-q) + q exp((2x-1)/(2 sigma^2)).
double log_integrand(double x, const MixtureArgs& a) {
    const double s2 = a.sigma * a.sigma;
    const double log_gauss =
        -x * x / (2.0 * s2) - std::log(a.sigma) - 0.5 * std::log(2.0 * 3.14159265358979323846);
    const double log_ratio =
        log_add(std::log1p(-a.q), std::log(a.q) + (2.0 * x - 1.0) / (2.0 * s2));
    return log_gauss + a.alpha * log_ratio;
}

double sgm_rdp_quadrature(double q, double sigma, double alpha) {
    const MixtureArgs args{q, sigma, alpha};
    // the integrand concentrates near 0 and decays like a Gaussian beyond
    // x ~ alpha; pad generously
    const double lo = -(12.0 + 10.0 * sigma * std::sqrt(alpha));
    const double hi = alpha + 12.0 + 10.0 * sigma * std::sqrt(alpha);
    const double log_int = detail::log_integral(
        [&args](double x) { return log_integrand(x, args); }, lo, hi, 1e-12);
    return std::max(0.0, log_int / (alpha - 1.0));
}

}  // namespace

namespace detail {

namespace {

struct Scaled {
    const std::function<double(double)>* log_f;
    double peak;
    double operator()(double x) const { return std::exp((*log_f)(x) - peak); }
};

double adaptive_simpson(const Scaled& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double log_integral(const std::function<double(double)>& log_f, double lo, double hi,
                    double abs_tol) {
    // locate the peak on a coarse grid so the integrand can be rescaled to
    // order one before summation
    constexpr int kProbe = 4096;
    double peak = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kProbe; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / kProbe;
        peak = std::max(peak, log_f(x));
    }
    const Scaled f{&log_f, peak};

    // split at the probe maximum so the two humps are integrated separately
    double total = 0.0;
    const int kSegments = 64;
    for (int s = 0; s < kSegments; ++s) {
        const double a = lo + (hi - lo) * static_cast<double>(s) / kSegments;
        const double b = lo + (hi - lo) * static_cast<double>(s + 1) / kSegments;
        const double m = 0.5 * (a + b);
        const double fa = f(a), fm = f(m), fb = f(b);
        const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += adaptive_simpson(f, a, b, fa, fm, fb, whole,
                                  abs_tol / kSegments, 48);
    }
    return peak + std::log(total);
}

}  // namespace detail

double gaussian_rdp(double sigma, double alpha) {
    if (!(sigma > 0.0)) throw InputError("gaussian_rdp: sigma must be > 0");
    if (!(alpha > 1.0)) throw InputError("gaussian_rdp: alpha must be > 1");
    return alpha / (2.0 * sigma * sigma);
}

double sgm_rdp(double q, double sigma, double alpha) {
    if (!(q >= 0.0 && q <= 1.0)) throw InputError("sgm_rdp: q must lie in [0, 1]");
    if (!(sigma > 0.0)) throw InputError("sgm_rdp: sigma must be > 0");
    if (!(alpha > 1.0)) throw InputError("sgm_rdp: alpha must be > 1");
    if (q == 0.0) return 0.0;
    if (q == 1.0) return gaussian_rdp(sigma, alpha);
    const double rounded = std::round(alpha);
    if (std::abs(alpha - rounded) < 1e-9 && rounded >= 2.0)
        return sgm_rdp_int(q, sigma, static_cast<std::uint64_t>(rounded));
    return sgm_rdp_quadrature(q, sigma, alpha);
}

RdpLedger::RdpLedger()
    : RdpLedger(std::vector<double>{1.25, 1.5, 1.75, 2, 2.5, 3, 4, 5, 6, 8, 16, 32, 64, 128,
                                    256}) {}

RdpLedger::RdpLedger(std::vector<double> orders) : orders_(std::move(orders)) {
    if (orders_.empty()) throw ConfigError("ledger: empty order grid");
    for (std::size_t i = 0; i < orders_.size(); ++i) {
        if (!(orders_[i] > 1.0)) throw ConfigError("ledger: orders must be > 1");
        if (i > 0 && !(orders_[i] > orders_[i - 1]))
            throw ConfigError("ledger: orders must be strictly increasing");
    }
}

void RdpLedger::account_step(double q, double sigma) { account_steps(q, sigma, 1); }

void RdpLedger::account_steps(double q, double sigma, std::uint64_t n) {
    if (n == 0) return;
    for (Setting& s : settings_) {
        if (s.q == q && s.sigma == sigma) {
            s.count += n;
            steps_ += n;
            return;
        }
    }
    Setting s{q, sigma, n, {}};
    s.increment.reserve(orders_.size());
    for (double alpha : orders_) s.increment.push_back(sgm_rdp(q, sigma, alpha));
    settings_.push_back(std::move(s));
    steps_ += n;
}

std::vector<double> RdpLedger::eps_rdp() const {
    std::vector<double> eps(orders_.size(), 0.0);
    for (const Setting& s : settings_)
        for (std::size_t i = 0; i < orders_.size(); ++i)
            eps[i] += static_cast<double>(s.count) * s.increment[i];
    return eps;
}

PrivacyReport RdpLedger::to_dp(double delta) const {
    if (!(delta > 0.0 && delta < 1.0)) throw InputError("to_dp: delta must lie in (0, 1)");
    PrivacyReport report;
    report.delta = delta;
    report.steps = steps_;
    const double log_inv_delta = std::log(1.0 / delta);
    const std::vector<double> eps_per_order = eps_rdp();
    double best = std::numeric_limits<double>::infinity();
    double best_order = orders_.front();
    for (std::size_t i = 0; i < orders_.size(); ++i) {
        const double eps = eps_per_order[i] + log_inv_delta / (orders_[i] - 1.0);
        if (eps < best) {
            best = eps;
            best_order = orders_[i];
        }
    }
    report.epsilon = best;
    report.best_order = best_order;
    return report;
}

double basic_composition(const std::vector<double>& epsilons) {
    double total = 0.0;
    for (double e : epsilons) {
        if (!(e >= 0.0)) throw InputError("basic_composition: epsilons must be >= 0");
        total += e;
    }
    return total;
}

double privacy_loss_sample(double p_outcome_x, double p_outcome_y) {
    if (!(p_outcome_x > 0.0 && p_outcome_y > 0.0))
        throw InputError("privacy_loss_sample: densities must be positive");
    return std::log(p_outcome_x / p_outcome_y);
}

}  // namespace dpsgd
