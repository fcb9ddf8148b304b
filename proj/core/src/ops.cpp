#include "dpsgd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dpsgd {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw InputError(msg);
}

void consume(bool& used, const char* op) {
    if (used) throw UsageError(std::string(op) + ": backward already ran for this context");
    used = true;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
    require(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a(i, l);
            if (av == 0.0) continue;
            const double* brow = &b.data[l * n];
            double* orow = &out.data[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

std::pair<Tensor, Conv2dContext> conv2d_forward(const Tensor& x, const Tensor& kernels,
                                                const Tensor& bias, std::size_t stride,
                                                std::size_t pad) {
    require(x.rank() == 3, "conv2d: input must be c_in x h x w");
    require(kernels.rank() == 4, "conv2d: kernels must be c_out x c_in x kh x kw");
    const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t c_out = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    require(kernels.dim(1) == c_in, "conv2d: channel mismatch");
    require(bias.numel() == c_out, "conv2d: bias length mismatch");
    require(kh <= h + 2 * pad && kw <= w + 2 * pad, "conv2d: kernel larger than input");
    require(stride >= 1, "conv2d: stride must be positive");
    if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0)
        throw ConfigError("conv2d: non-integral output extent");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;

    Tensor out({c_out, oh, ow});
    for (std::size_t co = 0; co < c_out; ++co) {
        const double b = bias(co);
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = b;
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride + ky) -
                            static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const double* xrow = &x.data[(ci * h + iy) * w];
                        const double* krow = &kernels.data[((co * c_in + ci) * kh + ky) * kw];
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += xrow[ix] * krow[kx];
                        }
                    }
                }
                out(co, oy, ox) = acc;
            }
        }
    }
    Conv2dContext ctx{x, kernels, stride, pad, false};
    return {std::move(out), std::move(ctx)};
}

Conv2dGrads conv2d_backward(Conv2dContext& ctx, const Tensor& grad_out) {
    consume(ctx.used, "conv2d");
    const Tensor& x = ctx.input;
    const Tensor& k = ctx.kernels;
    const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t c_out = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
    require(grad_out.dim(0) == c_out, "conv2d backward: grad_out channel mismatch");

    Conv2dGrads g;
    g.grad_input = Tensor({c_in, h, w});
    g.grad_kernels = Tensor({c_out, c_in, kh, kw});
    g.grad_bias = Tensor({c_out});

    for (std::size_t co = 0; co < c_out; ++co) {
        double bias_acc = 0.0;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double go = grad_out(co, oy, ox);
                if (go == 0.0) continue;
                bias_acc += go;
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * ctx.stride + ky) -
                            static_cast<std::ptrdiff_t>(ctx.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const double* xrow = &x.data[(ci * h + iy) * w];
                        double* gxrow = &g.grad_input.data[(ci * h + iy) * w];
                        const double* krow = &k.data[((co * c_in + ci) * kh + ky) * kw];
                        double* gkrow = &g.grad_kernels.data[((co * c_in + ci) * kh + ky) * kw];
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * ctx.stride + kx) -
                                static_cast<std::ptrdiff_t>(ctx.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            gkrow[kx] += go * xrow[ix];
                            gxrow[ix] += go * krow[kx];
                        }
                    }
                }
            }
        }
        g.grad_bias(co) = bias_acc;
    }
    return g;
}

std::pair<Tensor, MaxPoolContext> maxpool2x2_forward(const Tensor& x) {
    require(x.rank() == 3, "maxpool: input must be c x h x w");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(h % 2 == 0 && w % 2 == 0, "maxpool: extents must be even");
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor out({c, oh, ow});
    MaxPoolContext ctx;
    ctx.in_shape = x.shape;
    ctx.argmax.resize(out.numel());
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (ci * h + 2 * oy) * w + 2 * ox;
                double bv = x.data[best];
                const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
                for (std::size_t idx : cand) {
                    if (x.data[idx] > bv) {
                        bv = x.data[idx];
                        best = idx;
                    }
                }
                const std::size_t o = (ci * oh + oy) * ow + ox;
                out.data[o] = bv;
                ctx.argmax[o] = best;
            }
        }
    }
    return {std::move(out), std::move(ctx)};
}

Tensor maxpool2x2_backward(MaxPoolContext& ctx, const Tensor& grad_out) {
    consume(ctx.used, "maxpool");
    require(grad_out.numel() == ctx.argmax.size(), "maxpool backward: size mismatch");
    Tensor gx(ctx.in_shape);
    for (std::size_t o = 0; o < ctx.argmax.size(); ++o)
        gx.data[ctx.argmax[o]] += grad_out.data[o];
    return gx;
}

std::pair<Tensor, ReluContext> relu_forward(const Tensor& x) {
    Tensor out(x.shape);
    ReluContext ctx;
    ctx.positive.resize(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const bool pos = x.data[i] > 0.0;
        ctx.positive[i] = pos ? 1 : 0;
        out.data[i] = pos ? x.data[i] : 0.0;
    }
    return {std::move(out), std::move(ctx)};
}

Tensor relu_backward(ReluContext& ctx, const Tensor& grad_out) {
    consume(ctx.used, "relu");
    require(grad_out.numel() == ctx.positive.size(), "relu backward: size mismatch");
    Tensor gx(grad_out.shape);
    for (std::size_t i = 0; i < gx.numel(); ++i)
        gx.data[i] = ctx.positive[i] ? grad_out.data[i] : 0.0;
    return gx;
}

std::pair<Tensor, DropoutContext> dropout_forward(const Tensor& x, double p, CounterRng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1)");
    Tensor out(x.shape);
    DropoutContext ctx;
    ctx.mask.resize(x.numel());
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double m = rng.bernoulli(p) ? 0.0 : scale;
        ctx.mask[i] = m;
        out.data[i] = x.data[i] * m;
    }
    return {std::move(out), std::move(ctx)};
}

Tensor dropout_backward(DropoutContext& ctx, const Tensor& grad_out) {
    consume(ctx.used, "dropout");
    require(grad_out.numel() == ctx.mask.size(), "dropout backward: size mismatch");
    Tensor gx(grad_out.shape);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] = grad_out.data[i] * ctx.mask[i];
    return gx;
}

std::pair<Tensor, DenseContext> dense_forward(const Tensor& x, const Tensor& weights,
                                              const Tensor& bias) {
    require(weights.rank() == 2, "dense: weights must be out x in");
    const std::size_t out_dim = weights.dim(0), in_dim = weights.dim(1);
    require(x.numel() == in_dim, "dense: input length mismatch");
    require(bias.numel() == out_dim, "dense: bias length mismatch");
    Tensor y({out_dim});
    for (std::size_t o = 0; o < out_dim; ++o) {
        const double* wrow = &weights.data[o * in_dim];
        double acc = bias(o);
        for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * x.data[i];
        y(o) = acc;
    }
    DenseContext ctx{x, weights, false};
    return {std::move(y), std::move(ctx)};
}

DenseGrads dense_backward(DenseContext& ctx, const Tensor& grad_out) {
    consume(ctx.used, "dense");
    const std::size_t out_dim = ctx.weights.dim(0), in_dim = ctx.weights.dim(1);
    require(grad_out.numel() == out_dim, "dense backward: grad length mismatch");
    DenseGrads g;
    g.grad_input = Tensor({in_dim});
    g.grad_weights = Tensor({out_dim, in_dim});
    g.grad_bias = Tensor({out_dim});
    for (std::size_t o = 0; o < out_dim; ++o) {
        const double go = grad_out.data[o];
        g.grad_bias(o) = go;
        if (go == 0.0) continue;
        const double* wrow = &ctx.weights.data[o * in_dim];
        double* gwrow = &g.grad_weights.data[o * in_dim];
        for (std::size_t i = 0; i < in_dim; ++i) {
            gwrow[i] = go * ctx.input.data[i];
            g.grad_input.data[i] += go * wrow[i];
        }
    }
    return g;
}

SceResult softmax_cross_entropy(const Tensor& logits, std::size_t label) {
    const std::size_t n = logits.numel();
    require(label < n, "softmax_cross_entropy: label out of range");
    double mx = logits.data[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits.data[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(logits.data[i] - mx);
    const double logz = std::log(z);
    SceResult r;
    r.loss = logz - (logits.data[label] - mx);
    r.grad_logits = Tensor(logits.shape);
    for (std::size_t i = 0; i < n; ++i)
        r.grad_logits.data[i] = std::exp(logits.data[i] - mx) / z;
    r.grad_logits.data[label] -= 1.0;
    return r;
}

}  // namespace dpsgd
