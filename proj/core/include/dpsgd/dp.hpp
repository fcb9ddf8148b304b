#pragma once

#include <cstdint>
#include <vector>

#include "dpsgd/model.hpp"
#include "dpsgd/rng.hpp"

namespace dpsgd {

// Gradient perturbation mechanism: per-row L2 clipping, one Gaussian noise
// draw on the summed clipped gradients, Poisson lot selection.

struct PrivacyParams {
    double noise_multiplier = 1.1;  // sigma
    double clip_norm = 1.0;         // C
    double sample_rate = 0.01;      // q
    double target_delta = 1e-5;

    void validate() const;
};

// Each row g becomes g * min(1, C / ||g||); zero rows stay zero.
void clip_rows(PerSampleGrads& grads, double clip_norm);

// (sum of rows + N(0, sigma^2 C^2 I)) / lot_size. Noise is drawn
// single-threaded from the dedicated stream, coordinate by coordinate.
std::vector<double> noisy_aggregate(const PerSampleGrads& clipped, double sigma,
                                    double clip_norm, std::size_t lot_size, CounterRng& rng);

// Each index kept independently with probability q; ascending order.
std::vector<std::size_t> poisson_sample(std::size_t dataset_size, double q, CounterRng& rng);

}  // namespace dpsgd
