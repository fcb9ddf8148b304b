#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dpsgd/dp.hpp"
#include "dpsgd/errors.hpp"
#include "oracles.hpp"

using namespace dpsgd;

namespace {

PerSampleGrads make_grads(std::size_t rows, std::size_t cols, CounterRng& rng,
                          double scale = 1.0) {
    PerSampleGrads g;
    g.rows = rows;
    g.cols = cols;
    g.data.resize(rows * cols);
    for (double& v : g.data) v = scale * rng.normal();
    g.recompute_norms();
    return g;
}

double row_norm(const PerSampleGrads& g, std::size_t r) {
    double s = 0.0;
    for (std::size_t c = 0; c < g.cols; ++c) s += g.row(r)[c] * g.row(r)[c];
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("privacy params validation") {
    PrivacyParams p;
    p.validate();  // defaults are valid
    p.noise_multiplier = 0.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p.noise_multiplier = 1.1;
    p.sample_rate = 0.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p.sample_rate = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p.sample_rate = 0.01;
    p.target_delta = 1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("clip_rows hand cases") {
    const double C = 2.0;
    PerSampleGrads g;
    g.rows = 3;
    g.cols = 4;
    g.data = {1.0, 0.0, 0.0, 0.0,   // norm 1 = C/2: unchanged
              4.0, 0.0, 0.0, 0.0,   // norm 4 = 2C: halved
              0.0, 0.0, 0.0, 0.0};  // zero row: stays zero
    g.recompute_norms();
    clip_rows(g, C);
    CHECK(g.row(0)[0] == 1.0);
    CHECK(g.row(1)[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(row_norm(g, 1) == doctest::Approx(C).epsilon(1e-15));
    for (std::size_t c = 0; c < 4; ++c) CHECK(g.row(2)[c] == 0.0);
    CHECK(g.norms[1] == C);

    CHECK_THROWS_AS(clip_rows(g, 0.0), ConfigError);
}

TEST_CASE("clip_rows bounds every row norm by C") {
    CounterRng rng(21, Stream::init);
    PerSampleGrads g = make_grads(40, 17, rng, 3.0);
    const double C = 1.0;
    clip_rows(g, C);
    for (std::size_t r = 0; r < g.rows; ++r)
        CHECK(row_norm(g, r) <= C * (1.0 + 1e-12));
}

TEST_CASE("noisy_aggregate sigma=0 equals the clipped mean") {
    CounterRng rng(22, Stream::init);
    PerSampleGrads g = make_grads(8, 5, rng);
    clip_rows(g, 1.0);
    CounterRng noise(22, Stream::noise);
    const std::vector<double> update = noisy_aggregate(g, 0.0, 1.0, g.rows, noise);
    for (std::size_t c = 0; c < g.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < g.rows; ++r) mean += g.row(r)[c];
        mean /= static_cast<double>(g.rows);
        CHECK(update[c] == doctest::Approx(mean).epsilon(1e-15));
    }
    CHECK_THROWS_AS(noisy_aggregate(g, 1.0, 1.0, 0, noise), InputError);
}

TEST_CASE("noisy_aggregate is bit-reproducible for the same rng state") {
    CounterRng rng(23, Stream::init);
    PerSampleGrads g = make_grads(6, 7, rng);
    clip_rows(g, 1.0);
    CounterRng n1(5, Stream::noise, 9);
    CounterRng n2(5, Stream::noise, 9);
    CHECK(noisy_aggregate(g, 1.1, 1.0, 6, n1) == noisy_aggregate(g, 1.1, 1.0, 6, n2));
}

TEST_CASE("noisy_aggregate Monte-Carlo mean and variance") {
    CounterRng rng(24, Stream::init);
    PerSampleGrads g = make_grads(8, 4, rng);
    const double C = 1.0, sigma = 1.3;
    const std::size_t L = g.rows;
    clip_rows(g, C);
    std::vector<double> clipped_mean(g.cols, 0.0);
    for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) clipped_mean[c] += g.row(r)[c];
    for (double& v : clipped_mean) v /= static_cast<double>(L);

    const int draws = 20000;
    std::vector<std::vector<double>> per_coord(g.cols);
    CounterRng noise(77, Stream::noise);
    for (int d = 0; d < draws; ++d) {
        const std::vector<double> u = noisy_aggregate(g, sigma, C, L, noise);
        for (std::size_t c = 0; c < g.cols; ++c) per_coord[c].push_back(u[c]);
    }
    const double want_var = sigma * sigma * C * C / (static_cast<double>(L) * L);
    const double se = std::sqrt(want_var / draws);
    for (std::size_t c = 0; c < g.cols; ++c) {
        const oracles::MeanVar mv = oracles::mean_var(per_coord[c]);
        CHECK(std::abs(mv.mean - clipped_mean[c]) < 4.0 * se);
        CHECK(std::abs(mv.variance - want_var) / want_var < 0.05);
    }
}

TEST_CASE("influence bound: one row moves the noiseless aggregate by at most C/L") {
    CounterRng rng(25, Stream::init);
    PerSampleGrads g = make_grads(10, 6, rng, 2.0);
    const double C = 1.0;
    clip_rows(g, C);
    const std::size_t L = g.rows;
    CounterRng noise(0, Stream::noise);
    const std::vector<double> base = noisy_aggregate(g, 0.0, C, L, noise);

    for (std::size_t r = 0; r < g.rows; ++r) {
        PerSampleGrads h = g;
        for (std::size_t c = 0; c < h.cols; ++c) h.row(r)[c] = 0.0;  // remove row r
        h.recompute_norms();
        const std::vector<double> other = noisy_aggregate(h, 0.0, C, L, noise);
        double diff = 0.0;
        for (std::size_t c = 0; c < g.cols; ++c)
            diff += (base[c] - other[c]) * (base[c] - other[c]);
        CHECK(std::sqrt(diff) <= C / static_cast<double>(L) + 1e-12);
    }
}

TEST_CASE("poisson_sample q=1, determinism, q validation") {
    CounterRng r1(31, Stream::sampling, 4);
    const std::vector<std::size_t> all = poisson_sample(10, 1.0, r1);
    REQUIRE(all.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);

    CounterRng r2(31, Stream::sampling, 5);
    CounterRng r3(31, Stream::sampling, 5);
    CHECK(poisson_sample(1000, 0.1, r2) == poisson_sample(1000, 0.1, r3));

    CounterRng r4(31, Stream::sampling, 6);
    CHECK_THROWS_AS(poisson_sample(10, 0.0, r4), ConfigError);
    CHECK_THROWS_AS(poisson_sample(10, 1.1, r4), ConfigError);
}

TEST_CASE("poisson_sample lots are ascending and mean size is q*N") {
    const double q = 0.01;
    const std::size_t N = 60000;
    std::vector<double> sizes;
    for (std::uint64_t step = 0; step < 60; ++step) {
        CounterRng rng(9, Stream::sampling, step);
        const std::vector<std::size_t> lot = poisson_sample(N, q, rng);
        CHECK(std::is_sorted(lot.begin(), lot.end()));
        sizes.push_back(static_cast<double>(lot.size()));
    }
    const oracles::MeanVar mv = oracles::mean_var(sizes);
    // lot size ~ Binomial(N, q): mean qN = 600, sd sqrt(Nq(1-q)) ~ 24.4
    const double se = std::sqrt(N * q * (1.0 - q) / sizes.size());
    CHECK(std::abs(mv.mean - q * N) < 4.0 * se);
}
