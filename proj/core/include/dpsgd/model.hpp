#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dpsgd/ops.hpp"
#include "dpsgd/tensor.hpp"

namespace dpsgd {

enum class LayerKind { conv2d, maxpool, relu, dropout, dense, flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t channels = 0;  // conv2d
    std::size_t kernel = 0;    // conv2d
    std::size_t stride = 1;    // conv2d
    std::size_t pad = 0;       // conv2d
    std::size_t width = 0;     // dense
    double rate = 0.0;         // dropout
};

// Compact architecture syntax, whitespace separated:
//   conv:<out_ch>:<kernel>[:<stride>[:<pad>]]  maxpool  relu
//   dropout:<rate>  flatten  dense:<width>
std::vector<LayerSpec> parse_arch(const std::string& text);
std::string arch_to_string(const std::vector<LayerSpec>& specs);

// Default model: two conv layers, one dropout, two dense layers.
std::string default_arch();

enum class Mode { train, eval };

struct PerSampleGrads {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;   // rows x cols, row-major
    std::vector<double> norms;  // per-row L2 norm

    double* row(std::size_t i) { return &data[i * cols]; }
    const double* row(std::size_t i) const { return &data[i * cols]; }
    void recompute_norms();
};

struct GradResult {
    PerSampleGrads grads;
    double mean_loss = 0.0;
};

struct MomentumState {
    std::vector<double> velocity;
};

// Per-layer saved state for one sample's backward pass.
struct SampleTape {
    std::vector<std::variant<std::monostate, Conv2dContext, MaxPoolContext, ReluContext,
                             DropoutContext, DenseContext>>
        contexts;
};

class Network {
public:
    Network(std::vector<LayerSpec> specs, std::vector<std::size_t> input_shape,
            std::uint64_t seed);

    std::size_t param_count() const { return param_count_; }
    std::size_t num_layers() const { return specs_.size(); }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    const std::vector<std::size_t>& output_shape() const { return shapes_.back(); }

    // Flat parameter vector; per-layer slices given by param_slices().
    std::vector<double> flat_params() const;
    void set_flat_params(const std::vector<double>& flat);
    // (offset, size) per layer; zero size for parameterless layers.
    std::vector<std::pair<std::size_t, std::size_t>> param_slices() const;

    // Single-sample forward. In train mode a tape must be supplied and the
    // dropout rng is consumed; eval mode skips dropout entirely.
    Tensor forward_sample(const Tensor& x, Mode mode, CounterRng* dropout_rng,
                          SampleTape* tape) const;

    // Gradient of this sample's loss into grad_row (length param_count).
    void backward_sample(SampleTape& tape, const Tensor& grad_logits, double* grad_row) const;

    // One gradient row per sample. Dropout masks derive from
    // (dropout_seed, step, sample position), so results are identical for
    // any worker count. workers <= 0 uses the runtime default.
    GradResult per_sample_gradients(const std::vector<Tensor>& batch,
                                    const std::vector<std::size_t>& labels,
                                    std::uint64_t dropout_seed, std::uint64_t step,
                                    int workers = 0) const;

    // velocity <- mu * velocity + update; params <- params - lr * velocity
    void apply_update(const std::vector<double>& update, double lr, double mu,
                      MomentumState& state);

    // Fraction of samples whose argmax logit equals the label; optionally
    // the mean cross-entropy loss.
    double evaluate(const std::vector<Tensor>& images, const std::vector<std::size_t>& labels,
                    double* mean_loss = nullptr, int workers = 0) const;

    // Versioned checkpoint: magic, format version, architecture digest,
    // little-endian doubles.
    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);
    std::uint64_t arch_digest() const;

private:
    std::vector<LayerSpec> specs_;
    std::vector<std::vector<std::size_t>> shapes_;  // shapes_[i] = input shape of layer i
    std::vector<Tensor> weights_;                   // conv kernels / dense weights
    std::vector<Tensor> biases_;
    std::vector<std::pair<std::size_t, std::size_t>> slices_;
    std::size_t param_count_ = 0;
};

Network build_network(const std::vector<LayerSpec>& specs, std::uint64_t seed);

}  // namespace dpsgd
