#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace dpsgd {

// Privacy accounting for the Poisson-subsampled Gaussian mechanism:
// per-order RDP of one step, linear composition over steps, conversion to
// the tightest (epsilon, delta).

// RDP of the unsubsampled Gaussian mechanism at sensitivity 1: alpha/(2 sigma^2).
double gaussian_rdp(double sigma, double alpha);

// RDP of one subsampled-Gaussian step at order alpha. Integer alpha uses
// the exact binomial expansion in log space; fractional alpha falls back
// to adaptive quadrature of the Renyi divergence between N(0, sigma^2) and
// the mixture (1-q) N(0, sigma^2) + q N(1, sigma^2).
double sgm_rdp(double q, double sigma, double alpha);

struct PrivacyReport {
    double epsilon = 0.0;
    double delta = 0.0;
    double best_order = 0.0;
    std::uint64_t steps = 0;
};

class RdpLedger {
public:
    // Default order grid.
    RdpLedger();
    explicit RdpLedger(std::vector<double> orders);

    const std::vector<double>& orders() const { return orders_; }
    // accumulated eps(alpha) per order; count * increment per mechanism
    // setting, so T identical steps give exactly T times the single step
    std::vector<double> eps_rdp() const;
    std::uint64_t steps() const { return steps_; }

    // eps_rdp[alpha] += sgm_rdp(q, sigma, alpha) for every order.
    void account_step(double q, double sigma);
    void account_steps(double q, double sigma, std::uint64_t n);

    // epsilon = min over alpha of eps_rdp(alpha) + log(1/delta)/(alpha - 1);
    // ties resolve to the smallest order.
    PrivacyReport to_dp(double delta) const;

private:
    struct Setting {
        double q;
        double sigma;
        std::uint64_t count;
        std::vector<double> increment;  // one-step eps per order
    };

    std::vector<double> orders_;
    std::vector<Setting> settings_;
    std::uint64_t steps_ = 0;
};

// Sum of per-mechanism epsilons; every input must be >= 0.
double basic_composition(const std::vector<double>& epsilons);

// ln(p_x / p_y) for one observed outcome; both densities must be positive.
double privacy_loss_sample(double p_outcome_x, double p_outcome_y);

namespace detail {
// log of the integral of exp(log_f(x)) over [lo, hi]; adaptive Simpson with
// the given absolute tolerance on the peak-scaled integrand.
double log_integral(const std::function<double(double)>& log_f, double lo, double hi,
                    double abs_tol);
}  // namespace detail

}  // namespace dpsgd
