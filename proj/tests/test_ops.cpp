#include <doctest.h>

#include <cmath>

#include "dpsgd/ops.hpp"
#include "oracles.hpp"

using namespace dpsgd;

namespace {

Tensor randn(std::vector<std::size_t> shape, CounterRng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("matmul identity, hand case, zero") {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor a({2, 2}, {3, 1, 4, 1});
    const Tensor prod = matmul(eye, a);
    CHECK(prod.data == a.data);

    const Tensor b({2, 2}, {1, 2, 3, 4});
    const Tensor v({2, 1}, {0, 1});
    const Tensor bv = matmul(b, v);
    CHECK(bv(0, 0) == 2);
    CHECK(bv(1, 0) == 4);

    const Tensor zero({2, 2});
    const Tensor za = matmul(zero, a);
    for (double x : za.data) CHECK(x == 0.0);
}

TEST_CASE("matmul shape mismatch") {
    const Tensor a({2, 3});
    const Tensor b({2, 3});
    CHECK_THROWS_AS(matmul(a, b), InputError);
}

TEST_CASE("conv2d identity via 1x1 kernel") {
    CounterRng rng(11, Stream::init);
    const Tensor x = randn({1, 4, 4}, rng);
    const Tensor k({1, 1, 1, 1}, {1.0});
    const Tensor bias({1});
    auto [y, ctx] = conv2d_forward(x, k, bias);
    REQUIRE(y.shape == x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d all-ones hand case") {
    Tensor x({1, 3, 3});
    for (double& v : x.data) v = 1.0;
    Tensor k({1, 1, 2, 2});
    for (double& v : k.data) v = 1.0;
    const Tensor bias({1});
    auto [y, ctx] = conv2d_forward(x, k, bias);
    REQUIRE(y.shape == std::vector<std::size_t>{1, 2, 2});
    for (double v : y.data) CHECK(v == doctest::Approx(4.0));
}

TEST_CASE("conv2d bias-only with zero kernel") {
    CounterRng rng(12, Stream::init);
    const Tensor x = randn({2, 5, 5}, rng);
    const Tensor k({3, 2, 3, 3});
    const Tensor bias({3}, {0.5, -1.0, 2.0});
    auto [y, ctx] = conv2d_forward(x, k, bias);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 9; ++i) CHECK(y(c, i / 3, i % 3) == doctest::Approx(bias(c)));
}

TEST_CASE("conv2d non-integral output extent rejected") {
    const Tensor x({1, 5, 5});
    const Tensor k({1, 1, 2, 2});
    const Tensor bias({1});
    CHECK_THROWS_AS(conv2d_forward(x, k, bias, 2, 0), ConfigError);
}

TEST_CASE("conv2d backward zero grad and context reuse") {
    CounterRng rng(13, Stream::init);
    const Tensor x = randn({1, 4, 4}, rng);
    const Tensor k = randn({2, 1, 3, 3}, rng);
    const Tensor bias = randn({2}, rng);
    auto [y, ctx] = conv2d_forward(x, k, bias);
    const Tensor zero_grad(y.shape);
    Conv2dGrads g = conv2d_backward(ctx, zero_grad);
    for (double v : g.grad_input.data) CHECK(v == 0.0);
    for (double v : g.grad_kernels.data) CHECK(v == 0.0);
    for (double v : g.grad_bias.data) CHECK(v == 0.0);
    CHECK_THROWS_AS(conv2d_backward(ctx, zero_grad), UsageError);
}

TEST_CASE("conv2d scalar case reduces to product rule") {
    const Tensor x({1, 1, 1}, {3.0});
    const Tensor k({1, 1, 1, 1}, {2.0});
    const Tensor bias({1}, {0.25});
    auto [y, ctx] = conv2d_forward(x, k, bias);
    CHECK(y.data[0] == doctest::Approx(6.25));
    const Tensor gy({1, 1, 1}, {1.0});
    Conv2dGrads g = conv2d_backward(ctx, gy);
    CHECK(g.grad_input.data[0] == doctest::Approx(2.0));   // d/dx (k x + b) = k
    CHECK(g.grad_kernels.data[0] == doctest::Approx(3.0)); // d/dk (k x + b) = x
    CHECK(g.grad_bias.data[0] == doctest::Approx(1.0));
}

TEST_CASE("conv2d backward matches finite differences") {
    CounterRng rng(14, Stream::init);
    for (std::size_t pad : {std::size_t{0}, std::size_t{1}}) {
        Tensor x = randn({2, 6, 6}, rng);
        Tensor k = randn({3, 2, 3, 3}, rng);
        Tensor bias = randn({3}, rng);
        auto [y, ctx] = conv2d_forward(x, k, bias, 1, pad);
        const Tensor gy = randn(y.shape, rng);
        Conv2dGrads g = conv2d_backward(ctx, gy);

        auto scalar_loss = [&](const Tensor& xx, const Tensor& kk, const Tensor& bb) {
            auto [yy, cc] = conv2d_forward(xx, kk, bb, 1, pad);
            double s = 0.0;
            for (std::size_t i = 0; i < yy.numel(); ++i) s += yy.data[i] * gy.data[i];
            return s;
        };
        for (std::size_t i = 0; i < x.numel(); i += 7) {
            const double fd = oracles::central_difference(
                [&](double v) {
                    Tensor xx = x;
                    xx.data[i] = v;
                    return scalar_loss(xx, k, bias);
                },
                x.data[i]);
            CHECK(oracles::relative_error(g.grad_input.data[i], fd) < 1e-6);
        }
        for (std::size_t i = 0; i < k.numel(); i += 5) {
            const double fd = oracles::central_difference(
                [&](double v) {
                    Tensor kk = k;
                    kk.data[i] = v;
                    return scalar_loss(x, kk, bias);
                },
                k.data[i]);
            CHECK(oracles::relative_error(g.grad_kernels.data[i], fd) < 1e-6);
        }
        for (std::size_t i = 0; i < bias.numel(); ++i) {
            const double fd = oracles::central_difference(
                [&](double v) {
                    Tensor bb = bias;
                    bb.data[i] = v;
                    return scalar_loss(x, k, bb);
                },
                bias(i));
            CHECK(oracles::relative_error(g.grad_bias.data[i], fd) < 1e-6);
        }
    }
}

TEST_CASE("maxpool forward and backward") {
    Tensor x({1, 2, 2}, {1, 5, 3, 2});
    auto [y, ctx] = maxpool2x2_forward(x);
    CHECK(y.data[0] == 5);
    Tensor gy({1, 1, 1}, {2.5});
    Tensor gx = maxpool2x2_backward(ctx, gy);
    CHECK(gx.data[1] == 2.5);
    CHECK(gx.data[0] == 0.0);
    CHECK_THROWS_AS(maxpool2x2_backward(ctx, gy), UsageError);
}

TEST_CASE("relu semantics") {
    Tensor x({4}, {-1.0, 0.0, 2.0, -0.5});
    auto [y, ctx] = relu_forward(x);
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == 0.0);
    CHECK(y.data[2] == 2.0);
    CHECK(y.data[3] == 0.0);
    Tensor gy({4}, {1, 1, 1, 1});
    Tensor gx = relu_backward(ctx, gy);
    CHECK(gx.data[2] == 1.0);
    CHECK(gx.data[0] == 0.0);
}

TEST_CASE("dropout p=0 is the identity and p validation") {
    CounterRng rng(15, Stream::dropout);
    Tensor x({8}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto [y, ctx] = dropout_forward(x, 0.0, rng);
    CHECK(y.data == x.data);
    CHECK_THROWS_AS(dropout_forward(x, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(dropout_forward(x, -0.1, rng), ConfigError);
}

TEST_CASE("dropout mask deterministic per seed and inverted scaling") {
    Tensor x({64});
    for (std::size_t i = 0; i < 64; ++i) x.data[i] = 1.0;
    CounterRng r1(77, Stream::dropout, 3, 5);
    CounterRng r2(77, Stream::dropout, 3, 5);
    auto [y1, c1] = dropout_forward(x, 0.25, r1);
    auto [y2, c2] = dropout_forward(x, 0.25, r2);
    CHECK(y1.data == y2.data);
    for (double v : y1.data) CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
}

TEST_CASE("dense backward matches finite differences") {
    CounterRng rng(16, Stream::init);
    Tensor x = randn({6}, rng);
    Tensor w = randn({4, 6}, rng);
    Tensor b = randn({4}, rng);
    auto [y, ctx] = dense_forward(x, w, b);
    const Tensor gy = randn(y.shape, rng);
    DenseGrads g = dense_backward(ctx, gy);

    auto scalar_loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
        auto [yy, cc] = dense_forward(xx, ww, bb);
        double s = 0.0;
        for (std::size_t i = 0; i < yy.numel(); ++i) s += yy.data[i] * gy.data[i];
        return s;
    };
    for (std::size_t i = 0; i < w.numel(); ++i) {
        const double fd = oracles::central_difference(
            [&](double v) {
                Tensor ww = w;
                ww.data[i] = v;
                return scalar_loss(x, ww, b);
            },
            w.data[i]);
        CHECK(oracles::relative_error(g.grad_weights.data[i], fd) < 1e-6);
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double fd = oracles::central_difference(
            [&](double v) {
                Tensor xx = x;
                xx.data[i] = v;
                return scalar_loss(xx, w, b);
            },
            x.data[i]);
        CHECK(oracles::relative_error(g.grad_input.data[i], fd) < 1e-6);
    }
}

TEST_CASE("softmax cross entropy examples") {
    Tensor uniform({10});
    const SceResult r = softmax_cross_entropy(uniform, 3);
    CHECK(r.loss == doctest::Approx(2.302585092994046).epsilon(1e-12));

    // gradient entries sum to zero
    CounterRng rng(17, Stream::init);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor logits = randn({10}, rng, 3.0);
        const SceResult rr = softmax_cross_entropy(logits, static_cast<std::size_t>(trial) % 10);
        double s = 0.0;
        for (double v : rr.grad_logits.data) s += v;
        CHECK(std::abs(s) < 1e-12);
    }

    // extreme logits do not overflow
    Tensor extreme({2}, {1000.0, 0.0});
    const SceResult re = softmax_cross_entropy(extreme, 0);
    CHECK(re.loss >= 0.0);
    CHECK(re.loss < 1e-300);
    CHECK(re.grad_logits.all_finite());

    CHECK_THROWS_AS(softmax_cross_entropy(uniform, 10), InputError);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
    CounterRng rng(18, Stream::init);
    const Tensor logits = randn({5}, rng, 2.0);
    const SceResult r = softmax_cross_entropy(logits, 2);
    for (std::size_t i = 0; i < 5; ++i) {
        const double fd = oracles::central_difference(
            [&](double v) {
                Tensor ll = logits;
                ll.data[i] = v;
                return softmax_cross_entropy(ll, 2).loss;
            },
            logits.data[i]);
        CHECK(oracles::relative_error(r.grad_logits.data[i], fd) < 1e-6);
    }
}
