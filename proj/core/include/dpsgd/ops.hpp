#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dpsgd/rng.hpp"
#include "dpsgd/tensor.hpp"

namespace dpsgd {

// Explicit forward/backward primitives. Each forward returns the saved
// state its backward needs; backward consumes the context and may run at
// most once.

Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dContext {
    Tensor input;    // c_in x h x w
    Tensor kernels;  // c_out x c_in x kh x kw
    std::size_t stride = 1;
    std::size_t pad = 0;
    bool used = false;
};

struct Conv2dGrads {
    Tensor grad_input;
    Tensor grad_kernels;
    Tensor grad_bias;
};

// Valid cross-correlation plus bias; output extent (h + 2p - kh)/s + 1 must
// be integral.
std::pair<Tensor, Conv2dContext> conv2d_forward(const Tensor& x, const Tensor& kernels,
                                                const Tensor& bias, std::size_t stride = 1,
                                                std::size_t pad = 0);
Conv2dGrads conv2d_backward(Conv2dContext& ctx, const Tensor& grad_out);

struct MaxPoolContext {
    std::vector<std::size_t> argmax;  // flat input index per output cell
    std::vector<std::size_t> in_shape;
    bool used = false;
};

std::pair<Tensor, MaxPoolContext> maxpool2x2_forward(const Tensor& x);
Tensor maxpool2x2_backward(MaxPoolContext& ctx, const Tensor& grad_out);

struct ReluContext {
    std::vector<std::uint8_t> positive;
    bool used = false;
};

std::pair<Tensor, ReluContext> relu_forward(const Tensor& x);
Tensor relu_backward(ReluContext& ctx, const Tensor& grad_out);

struct DropoutContext {
    std::vector<double> mask;  // 0 or 1/(1-p)
    bool used = false;
};

// Inverted dropout: surviving units scaled by 1/(1-p) at train time.
// p must lie in [0, 1).
std::pair<Tensor, DropoutContext> dropout_forward(const Tensor& x, double p, CounterRng& rng);
Tensor dropout_backward(DropoutContext& ctx, const Tensor& grad_out);

struct DenseContext {
    Tensor input;    // flat vector
    Tensor weights;  // out x in
    bool used = false;
};

struct DenseGrads {
    Tensor grad_input;
    Tensor grad_weights;
    Tensor grad_bias;
};

std::pair<Tensor, DenseContext> dense_forward(const Tensor& x, const Tensor& weights,
                                              const Tensor& bias);
DenseGrads dense_backward(DenseContext& ctx, const Tensor& grad_out);

struct SceResult {
    double loss = 0.0;
    Tensor grad_logits;
};

// loss = -log softmax(logits)[label], stabilized by max subtraction.
SceResult softmax_cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace dpsgd
