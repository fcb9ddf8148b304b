#include "dpsgd/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpsgd/errors.hpp"
#include "dpsgd/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dpsgd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'P', 'S', 'G', 'D', 'N', 'E', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> toks;
    std::string t;
    while (in >> t) toks.push_back(t);
    return toks;
}

std::vector<std::string> split_colon(const std::string& tok) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : tok) {
        if (c == ':') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

}  // namespace

std::string default_arch() {
    return "conv:10:5 relu maxpool conv:20:5 relu maxpool dropout:0.1 flatten "
           "dense:32 relu dense:10";
}

std::vector<LayerSpec> parse_arch(const std::string& text) {
    std::vector<LayerSpec> specs;
    for (const std::string& tok : tokenize(text)) {
        const auto parts = split_colon(tok);
        const std::string& kind = parts[0];
        LayerSpec s;
        try {
            if (kind == "conv") {
                if (parts.size() < 3 || parts.size() > 5)
                    throw ConfigError("arch: conv takes out_ch:kernel[:stride[:pad]]");
                s.kind = LayerKind::conv2d;
                s.channels = std::stoul(parts[1]);
                s.kernel = std::stoul(parts[2]);
                s.stride = parts.size() > 3 ? std::stoul(parts[3]) : 1;
                s.pad = parts.size() > 4 ? std::stoul(parts[4]) : 0;
            } else if (kind == "maxpool") {
                s.kind = LayerKind::maxpool;
            } else if (kind == "relu") {
                s.kind = LayerKind::relu;
            } else if (kind == "dropout") {
                if (parts.size() != 2) throw ConfigError("arch: dropout takes a rate");
                s.kind = LayerKind::dropout;
                s.rate = std::stod(parts[1]);
                if (!(s.rate >= 0.0 && s.rate < 1.0))
                    throw ConfigError("arch: dropout rate must lie in [0, 1)");
            } else if (kind == "flatten") {
                s.kind = LayerKind::flatten;
            } else if (kind == "dense") {
                if (parts.size() != 2) throw ConfigError("arch: dense takes a width");
                s.kind = LayerKind::dense;
                s.width = std::stoul(parts[1]);
            } else {
                throw ConfigError("arch: unknown layer kind '" + kind + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("arch: malformed token '" + tok + "'");
        }
        specs.push_back(s);
    }
    if (specs.empty()) throw ConfigError("arch: empty architecture");
    return specs;
}

std::string arch_to_string(const std::vector<LayerSpec>& specs) {
    std::ostringstream out;
    bool first = true;
    for (const LayerSpec& s : specs) {
        if (!first) out << ' ';
        first = false;
        switch (s.kind) {
            case LayerKind::conv2d:
                out << "conv:" << s.channels << ':' << s.kernel;
                if (s.stride != 1 || s.pad != 0) out << ':' << s.stride;
                if (s.pad != 0) out << ':' << s.pad;
                break;
            case LayerKind::maxpool: out << "maxpool"; break;
            case LayerKind::relu: out << "relu"; break;
            case LayerKind::dropout: out << "dropout:" << s.rate; break;
            case LayerKind::flatten: out << "flatten"; break;
            case LayerKind::dense: out << "dense:" << s.width; break;
        }
    }
    return out.str();
}

void PerSampleGrads::recompute_norms() {
    norms.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* p = row(r);
        for (std::size_t c = 0; c < cols; ++c) acc += p[c] * p[c];
        norms[r] = std::sqrt(acc);
    }
}

Network::Network(std::vector<LayerSpec> specs, std::vector<std::size_t> input_shape,
                 std::uint64_t seed)
    : specs_(std::move(specs)) {
    shapes_.push_back(std::move(input_shape));
    weights_.resize(specs_.size());
    biases_.resize(specs_.size());
    slices_.resize(specs_.size(), {0, 0});

    std::size_t offset = 0;
    for (std::size_t li = 0; li < specs_.size(); ++li) {
        const LayerSpec& s = specs_[li];
        const std::vector<std::size_t>& in = shapes_.back();
        std::vector<std::size_t> out;
        switch (s.kind) {
            case LayerKind::conv2d: {
                if (in.size() != 3) throw ConfigError("network: conv input must be rank 3");
                const std::size_t h = in[1], w = in[2];
                if (s.kernel > h + 2 * s.pad || s.kernel > w + 2 * s.pad)
                    throw ConfigError("network: conv kernel larger than input");
                if ((h + 2 * s.pad - s.kernel) % s.stride != 0 ||
                    (w + 2 * s.pad - s.kernel) % s.stride != 0)
                    throw ConfigError("network: non-integral conv output extent");
                out = {s.channels, (h + 2 * s.pad - s.kernel) / s.stride + 1,
                       (w + 2 * s.pad - s.kernel) / s.stride + 1};
                weights_[li] = Tensor({s.channels, in[0], s.kernel, s.kernel});
                biases_[li] = Tensor({s.channels});
                break;
            }
            case LayerKind::maxpool: {
                if (in.size() != 3 || in[1] % 2 != 0 || in[2] % 2 != 0)
                    throw ConfigError("network: maxpool needs rank-3 input with even extents");
                out = {in[0], in[1] / 2, in[2] / 2};
                break;
            }
            case LayerKind::relu:
            case LayerKind::dropout: out = in; break;
            case LayerKind::flatten: {
                std::size_t n = 1;
                for (std::size_t e : in) n *= e;
                out = {n};
                break;
            }
            case LayerKind::dense: {
                if (in.size() != 1) throw ConfigError("network: dense input must be flat");
                out = {s.width};
                weights_[li] = Tensor({s.width, in[0]});
                biases_[li] = Tensor({s.width});
                break;
            }
        }
        const std::size_t sz = weights_[li].numel() + biases_[li].numel();
        slices_[li] = {offset, sz};
        offset += sz;
        shapes_.push_back(std::move(out));
    }
    param_count_ = offset;

    // Kaiming-uniform initialization, one rng stream per layer.
    for (std::size_t li = 0; li < specs_.size(); ++li) {
        if (weights_[li].numel() == 0) continue;
        std::size_t fan_in = 0;
        if (specs_[li].kind == LayerKind::conv2d)
            fan_in = weights_[li].dim(1) * weights_[li].dim(2) * weights_[li].dim(3);
        else
            fan_in = weights_[li].dim(1);
        const double wb = std::sqrt(6.0 / static_cast<double>(fan_in));
        const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
        CounterRng rng(seed, Stream::init, li);
        for (double& v : weights_[li].data) v = (2.0 * rng.uniform() - 1.0) * wb;
        for (double& v : biases_[li].data) v = (2.0 * rng.uniform() - 1.0) * bb;
    }
}

Network build_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    return Network(specs, {1, 28, 28}, seed);
}

std::vector<double> Network::flat_params() const {
    std::vector<double> flat(param_count_);
    for (std::size_t li = 0; li < specs_.size(); ++li) {
        double* dst = flat.data() + slices_[li].first;
        std::copy(weights_[li].data.begin(), weights_[li].data.end(), dst);
        std::copy(biases_[li].data.begin(), biases_[li].data.end(),
                  dst + weights_[li].numel());
    }
    return flat;
}

void Network::set_flat_params(const std::vector<double>& flat) {
    if (flat.size() != param_count_) throw InputError("set_flat_params: length mismatch");
    for (std::size_t li = 0; li < specs_.size(); ++li) {
        const double* src = flat.data() + slices_[li].first;
        std::copy(src, src + weights_[li].numel(), weights_[li].data.begin());
        std::copy(src + weights_[li].numel(), src + slices_[li].second,
                  biases_[li].data.begin());
    }
}

std::vector<std::pair<std::size_t, std::size_t>> Network::param_slices() const {
    return slices_;
}

Tensor Network::forward_sample(const Tensor& x, Mode mode, CounterRng* dropout_rng,
                               SampleTape* tape) const {
    if (x.shape != shapes_.front()) throw InputError("forward: wrong input shape");
    if (mode == Mode::train && (tape == nullptr || dropout_rng == nullptr))
        throw UsageError("forward: train mode needs a tape and a dropout rng");
    if (tape) {
        tape->contexts.clear();
        tape->contexts.resize(specs_.size());
    }

    Tensor cur = x;
    for (std::size_t li = 0; li < specs_.size(); ++li) {
        const LayerSpec& s = specs_[li];
        switch (s.kind) {
            case LayerKind::conv2d: {
                auto [y, ctx] = conv2d_forward(cur, weights_[li], biases_[li], s.stride, s.pad);
                cur = std::move(y);
                if (tape) tape->contexts[li] = std::move(ctx);
                break;
            }
            case LayerKind::maxpool: {
                auto [y, ctx] = maxpool2x2_forward(cur);
                cur = std::move(y);
                if (tape) tape->contexts[li] = std::move(ctx);
                break;
            }
            case LayerKind::relu: {
                auto [y, ctx] = relu_forward(cur);
                cur = std::move(y);
                if (tape) tape->contexts[li] = std::move(ctx);
                break;
            }
            case LayerKind::dropout: {
                if (mode == Mode::eval) break;  // identity at evaluation
                auto [y, ctx] = dropout_forward(cur, s.rate, *dropout_rng);
                cur = std::move(y);
                if (tape) tape->contexts[li] = std::move(ctx);
                break;
            }
            case LayerKind::flatten: {
                cur.shape = {cur.numel()};
                break;
            }
            case LayerKind::dense: {
                auto [y, ctx] = dense_forward(cur, weights_[li], biases_[li]);
                cur = std::move(y);
                if (tape) tape->contexts[li] = std::move(ctx);
                break;
            }
        }
    }
    return cur;
}

void Network::backward_sample(SampleTape& tape, const Tensor& grad_logits,
                              double* grad_row) const {
    if (tape.contexts.size() != specs_.size())
        throw UsageError("backward: tape does not match a train-mode forward");
    Tensor grad = grad_logits;
    for (std::size_t i = specs_.size(); i-- > 0;) {
        const LayerSpec& s = specs_[i];
        switch (s.kind) {
            case LayerKind::conv2d: {
                auto& ctx = std::get<Conv2dContext>(tape.contexts[i]);
                Conv2dGrads g = conv2d_backward(ctx, grad);
                double* dst = grad_row + slices_[i].first;
                std::copy(g.grad_kernels.data.begin(), g.grad_kernels.data.end(), dst);
                std::copy(g.grad_bias.data.begin(), g.grad_bias.data.end(),
                          dst + g.grad_kernels.numel());
                grad = std::move(g.grad_input);
                break;
            }
            case LayerKind::maxpool: {
                auto& ctx = std::get<MaxPoolContext>(tape.contexts[i]);
                grad = maxpool2x2_backward(ctx, grad);
                break;
            }
            case LayerKind::relu: {
                auto& ctx = std::get<ReluContext>(tape.contexts[i]);
                grad = relu_backward(ctx, grad);
                break;
            }
            case LayerKind::dropout: {
                if (std::holds_alternative<std::monostate>(tape.contexts[i])) break;
                auto& ctx = std::get<DropoutContext>(tape.contexts[i]);
                grad = dropout_backward(ctx, grad);
                break;
            }
            case LayerKind::flatten: {
                grad.shape = shapes_[i];
                break;
            }
            case LayerKind::dense: {
                auto& ctx = std::get<DenseContext>(tape.contexts[i]);
                DenseGrads g = dense_backward(ctx, grad);
                double* dst = grad_row + slices_[i].first;
                std::copy(g.grad_weights.data.begin(), g.grad_weights.data.end(), dst);
                std::copy(g.grad_bias.data.begin(), g.grad_bias.data.end(),
                          dst + g.grad_weights.numel());
                grad = std::move(g.grad_input);
                break;
            }
        }
    }
}

GradResult Network::per_sample_gradients(const std::vector<Tensor>& batch,
                                         const std::vector<std::size_t>& labels,
                                         std::uint64_t dropout_seed, std::uint64_t step,
                                         int workers) const {
    if (batch.size() != labels.size())
        throw InputError("per_sample_gradients: batch/label length mismatch");
    GradResult result;
    result.grads.rows = batch.size();
    result.grads.cols = param_count_;
    result.grads.data.assign(batch.size() * param_count_, 0.0);
    std::vector<double> losses(batch.size(), 0.0);

#ifdef _OPENMP
    const int nthreads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
#else
    (void)workers;
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(batch.size()); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        CounterRng drop_rng(dropout_seed, Stream::dropout, step, ui);
        SampleTape tape;
        Tensor logits = forward_sample(batch[ui], Mode::train, &drop_rng, &tape);
        SceResult sce = softmax_cross_entropy(logits, labels[ui]);
        losses[ui] = sce.loss;
        backward_sample(tape, sce.grad_logits, result.grads.row(ui));
    }

    // fixed-order reduction keeps results identical across worker counts
    double loss_sum = 0.0;
    for (double l : losses) loss_sum += l;
    result.mean_loss = batch.empty() ? 0.0 : loss_sum / static_cast<double>(batch.size());
    result.grads.recompute_norms();
    return result;
}

void Network::apply_update(const std::vector<double>& update, double lr, double mu,
                           MomentumState& state) {
    if (update.size() != param_count_) throw InputError("apply_update: length mismatch");
    if (state.velocity.empty()) state.velocity.assign(param_count_, 0.0);
    if (state.velocity.size() != param_count_)
        throw InputError("apply_update: momentum state length mismatch");
    for (std::size_t li = 0; li < specs_.size(); ++li) {
        const auto [off, sz] = slices_[li];
        if (sz == 0) continue;
        const std::size_t wn = weights_[li].numel();
        for (std::size_t j = 0; j < sz; ++j) {
            double& v = state.velocity[off + j];
            v = mu * v + update[off + j];
            double& p = j < wn ? weights_[li].data[j] : biases_[li].data[j - wn];
            p -= lr * v;
        }
    }
}

double Network::evaluate(const std::vector<Tensor>& images,
                         const std::vector<std::size_t>& labels, double* mean_loss,
                         int workers) const {
    if (images.size() != labels.size()) throw InputError("evaluate: length mismatch");
    if (images.empty()) throw InputError("evaluate: empty dataset");
    std::vector<double> losses(images.size(), 0.0);
    std::vector<std::uint8_t> correct(images.size(), 0);

#ifdef _OPENMP
    const int nthreads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
#else
    (void)workers;
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(images.size()); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        Tensor logits = forward_sample(images[ui], Mode::eval, nullptr, nullptr);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.numel(); ++j)
            if (logits.data[j] > logits.data[arg]) arg = j;
        correct[ui] = arg == labels[ui] ? 1 : 0;
        if (mean_loss) losses[ui] = softmax_cross_entropy(logits, labels[ui]).loss;
    }

    std::size_t ncorrect = 0;
    for (std::uint8_t c : correct) ncorrect += c;
    if (mean_loss) {
        double s = 0.0;
        for (double l : losses) s += l;
        *mean_loss = s / static_cast<double>(images.size());
    }
    return static_cast<double>(ncorrect) / static_cast<double>(images.size());
}

std::uint64_t Network::arch_digest() const {
    std::ostringstream id;
    id << arch_to_string(specs_) << '|';
    for (std::size_t e : shapes_.front()) id << e << ',';
    return fnv1a(id.str());
}

void Network::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t ver = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t digest = arch_digest();
    out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
    const std::uint64_t count = param_count_;
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    const std::vector<double> flat = flat_params();
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

void Network::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError("checkpoint: bad magic in '" + path + "'");
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
    std::uint64_t digest = 0, count = 0;
    in.read(reinterpret_cast<char*>(&digest), sizeof(digest));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (digest != arch_digest()) throw DataError("checkpoint: architecture digest mismatch");
    if (count != param_count_) throw DataError("checkpoint: parameter count mismatch");
    std::vector<double> flat(param_count_);
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated payload in '" + path + "'");
    set_flat_params(flat);
}

}  // namespace dpsgd
