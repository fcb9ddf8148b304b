#include "dpsgd/dp.hpp"

#include <cmath>

#include "dpsgd/errors.hpp"

namespace dpsgd {

void PrivacyParams::validate() const {
    if (!(noise_multiplier > 0.0)) throw ConfigError("dp: noise multiplier must be > 0");
    if (!(clip_norm > 0.0)) throw ConfigError("dp: clip norm must be > 0");
    if (!(sample_rate > 0.0 && sample_rate <= 1.0))
        throw ConfigError("dp: sample rate must lie in (0, 1]");
    if (!(target_delta > 0.0 && target_delta < 1.0))
        throw ConfigError("dp: delta must lie in (0, 1)");
}

void clip_rows(PerSampleGrads& grads, double clip_norm) {
    if (!(clip_norm > 0.0)) throw ConfigError("clip_rows: clip norm must be > 0");
    if (grads.norms.size() != grads.rows) grads.recompute_norms();
    for (std::size_t r = 0; r < grads.rows; ++r) {
        const double norm = grads.norms[r];
        if (norm <= clip_norm) continue;
        const double scale = clip_norm / norm;
        double* p = grads.row(r);
        for (std::size_t c = 0; c < grads.cols; ++c) p[c] *= scale;
        grads.norms[r] = clip_norm;
    }
}

std::vector<double> noisy_aggregate(const PerSampleGrads& clipped, double sigma,
                                    double clip_norm, std::size_t lot_size, CounterRng& rng) {
    if (lot_size == 0) throw InputError("noisy_aggregate: empty lot; skip the step instead");
    if (!(sigma >= 0.0)) throw ConfigError("noisy_aggregate: sigma must be >= 0");
    if (!(clip_norm > 0.0)) throw ConfigError("noisy_aggregate: clip norm must be > 0");

    std::vector<double> update(clipped.cols, 0.0);
    for (std::size_t r = 0; r < clipped.rows; ++r) {
        const double* p = clipped.row(r);
        for (std::size_t c = 0; c < clipped.cols; ++c) update[c] += p[c];
    }
    const double noise_scale = sigma * clip_norm;
    const double inv_lot = 1.0 / static_cast<double>(lot_size);
    for (std::size_t c = 0; c < clipped.cols; ++c)
        update[c] = (update[c] + noise_scale * rng.normal()) * inv_lot;
    return update;
}

std::vector<std::size_t> poisson_sample(std::size_t dataset_size, double q, CounterRng& rng) {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("poisson_sample: q must lie in (0, 1]");
    std::vector<std::size_t> lot;
    lot.reserve(static_cast<std::size_t>(q * static_cast<double>(dataset_size) * 1.5) + 16);
    for (std::size_t i = 0; i < dataset_size; ++i)
        if (rng.bernoulli(q)) lot.push_back(i);
    return lot;
}

}  // namespace dpsgd
