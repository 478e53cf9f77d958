#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "splitquant/bytes.hpp"
#include "splitquant/quantizer.hpp"
#include "splitquant/random.hpp"
#include "splitquant/tensor.hpp"

namespace splitquant {

// ---------------------------------------------------------------------------
// Straight-through rounding
// ---------------------------------------------------------------------------

/// Forward: round half away from zero. Backward: identity pass-through.
inline double ste_round_forward(double x) { return std::round(x); }
inline double ste_round_backward(double upstream) { return upstream; }

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

enum class Activation : std::uint32_t { Identity = 0, Gelu = 1, Relu = 2 };

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Gelu: return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
        case Activation::Relu: return x > 0.0 ? x : 0.0;
    }
    throw std::invalid_argument("unknown activation");
}

inline double activate_grad(Activation a, double x) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::Gelu: {
            const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
            return cdf + x * pdf;
        }
        case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    }
    throw std::invalid_argument("unknown activation");
}

/// One fully connected layer: out = act(W x + b), weights stored row-major
/// [out_dim, in_dim].
struct DenseLayer {
    FeatureTensor weights;  // rank 2, [out, in]
    FeatureTensor bias;     // rank 1, [out]
    Activation activation = Activation::Identity;

    std::size_t in_dim() const { return weights.shape().at(1); }
    std::size_t out_dim() const { return weights.shape().at(0); }

    void validate() const {
        if (weights.shape().size() != 2 || bias.shape().size() != 1)
            throw std::invalid_argument("shape mismatch");
        if (bias.shape()[0] != weights.shape()[0]) throw std::invalid_argument("shape mismatch");
    }
};

/// Uniform Glorot-style initialization, deterministic under the caller's rng.
inline DenseLayer make_layer(std::size_t out_dim, std::size_t in_dim, Activation act, Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    std::vector<double> w(out_dim * in_dim);
    for (double& v : w) v = rng.uniform(-s, s);
    std::vector<double> b(out_dim, 0.0);
    DenseLayer layer;
    layer.weights = FeatureTensor({out_dim, in_dim}, std::move(w));
    layer.bias = FeatureTensor({out_dim}, std::move(b));
    layer.activation = act;
    return layer;
}

namespace detail {

struct LayerCache {
    std::vector<double> input;  // B x in
    std::vector<double> pre;    // B x out, preactivation
};

// out = act(W in + b) over a batch laid out row-major [B, d].
inline std::vector<double> layer_forward(const DenseLayer& l, const std::vector<double>& in,
                                         std::size_t batch, LayerCache* cache) {
    const std::size_t din = l.in_dim();
    const std::size_t dout = l.out_dim();
    if (in.size() != batch * din) throw std::invalid_argument("shape mismatch");
    const auto& w = l.weights.data();
    const auto& b = l.bias.data();
    std::vector<double> pre(batch * dout);
    for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t o = 0; o < dout; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < din; ++i) acc += w[o * din + i] * in[s * din + i];
            pre[s * dout + o] = acc;
        }
    std::vector<double> out(pre);
    for (double& v : out) v = activate(l.activation, v);
    if (cache) {
        cache->input = in;
        cache->pre = std::move(pre);
    }
    return out;
}

struct LayerGrads {
    std::vector<double> w;  // out x in
    std::vector<double> b;  // out
};

// Returns gradient with respect to the layer input; fills g with parameter
// gradients.
inline std::vector<double> layer_backward(const DenseLayer& l, const LayerCache& cache,
                                          const std::vector<double>& dout, std::size_t batch,
                                          LayerGrads& g) {
    const std::size_t din = l.in_dim();
    const std::size_t dn = l.out_dim();
    const auto& w = l.weights.data();
    g.w.assign(dn * din, 0.0);
    g.b.assign(dn, 0.0);
    std::vector<double> din_grad(batch * din, 0.0);
    for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t o = 0; o < dn; ++o) {
            const double dpre =
                dout[s * dn + o] * activate_grad(l.activation, cache.pre[s * dn + o]);
            g.b[o] += dpre;
            for (std::size_t i = 0; i < din; ++i) {
                g.w[o * din + i] += dpre * cache.input[s * din + i];
                din_grad[s * din + i] += dpre * w[o * din + i];
            }
        }
    return din_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class TaskKind { Autoencoder, Classifier };

namespace detail {

// Mean squared error over all elements.
inline double mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw std::invalid_argument("shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

inline void mse_loss_grad(const std::vector<double>& pred, const std::vector<double>& target,
                          std::vector<double>& grad) {
    grad.resize(pred.size());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) grad[i] = scale * (pred[i] - target[i]);
}

// Softmax cross-entropy against one-hot (or soft) targets, mean over the
// batch.
inline double ce_loss(const std::vector<double>& logits, const std::vector<double>& target,
                      std::size_t batch) {
    if (logits.size() != target.size() || batch == 0 || logits.size() % batch != 0)
        throw std::invalid_argument("shape mismatch");
    const std::size_t d = logits.size() / batch;
    double acc = 0.0;
    for (std::size_t s = 0; s < batch; ++s) {
        double m = logits[s * d];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, logits[s * d + j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < d; ++j) lse += std::exp(logits[s * d + j] - m);
        lse = m + std::log(lse);
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += target[s * d + j] * logits[s * d + j];
        acc += lse - dot;
    }
    return acc / static_cast<double>(batch);
}

inline void ce_loss_grad(const std::vector<double>& logits, const std::vector<double>& target,
                         std::size_t batch, std::vector<double>& grad) {
    const std::size_t d = logits.size() / batch;
    grad.resize(logits.size());
    for (std::size_t s = 0; s < batch; ++s) {
        double m = logits[s * d];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, logits[s * d + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(logits[s * d + j] - m);
        for (std::size_t j = 0; j < d; ++j)
            grad[s * d + j] =
                (std::exp(logits[s * d + j] - m) / z - target[s * d + j]) /
                static_cast<double>(batch);
    }
}

}  // namespace detail

/// task_loss(pred, target) + alpha * commit. Task loss is MSE for the
/// autoencoder task and softmax cross-entropy for the classifier task.
inline double total_loss(const FeatureTensor& pred, const FeatureTensor& target, double commit,
                         double alpha, TaskKind task = TaskKind::Autoencoder) {
    if (!pred.same_shape(target)) throw std::invalid_argument("shape mismatch");
    const std::size_t batch = pred.shape().size() == 2 ? pred.shape()[0] : 1;
    const double t = task == TaskKind::Autoencoder
                         ? detail::mse_loss(pred.data(), target.data())
                         : detail::ce_loss(pred.data(), target.data(), batch);
    return t + alpha * commit;
}

// ---------------------------------------------------------------------------
// Split pipeline
// ---------------------------------------------------------------------------

namespace detail {

enum class QuantMode { Real, Surrogate, Off };

// Constants frozen for the straight-through surrogate: the affine scale map
// and the lattice points the commitment term pulls toward.
struct SurrogateConsts {
    bool tanh_mode = false;
    double a = 1.0;  // e = a*h + b when !tanh_mode
    double b = 0.0;
    std::vector<double> z0;  // frozen lattice values
};

struct QuantNodeCache {
    bool active = false;
    std::vector<double> e;      // scaled features
    std::vector<double> z;      // lattice values (constant in backward)
    std::vector<double> slope;  // de/dh per element
    double half = 1.0;
    CommitmentForm form = CommitmentForm::SquaredForm;
};

// Affine slope of the clipped linear scaling, treated as a constant of the
// forward pass.
inline double linear_scale_slope(const FeatureTensor& h) {
    TensorStats s = stats(h);
    FeatureTensor c = clip(h, s.mean - 3.0 * s.std, s.mean + 3.0 * s.std);
    TensorStats cs = stats(c);
    const double range = cs.max - cs.min;
    return range == 0.0 ? 0.0 : 2.0 / range;
}

inline double linear_scale_offset(const FeatureTensor& h, double slope) {
    if (slope == 0.0) return 0.0;
    TensorStats s = stats(h);
    FeatureTensor c = clip(h, s.mean - 3.0 * s.std, s.mean + 3.0 * s.std);
    TensorStats cs = stats(c);
    return -slope * cs.min - 1.0;
}

// d(commit)/de for the unweighted commitment loss, z held constant.
inline void commit_grad(const QuantNodeCache& q, std::vector<double>& grad) {
    const std::size_t n = q.e.size();
    grad.assign(n, 0.0);
    if (q.form == CommitmentForm::SquaredForm) {
        const double scale = 2.0 * q.half / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) grad[i] = scale * (q.half * q.e[i] - q.z[i]);
        return;
    }
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = q.half * q.e[i];
        dot += u * q.z[i];
        nu += u * u;
        nv += q.z[i] * q.z[i];
    }
    if (nu == 0.0 || nv == 0.0) return;  // degenerate direction, no slope
    const double lu = std::sqrt(nu);
    const double lv = std::sqrt(nv);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = q.half * q.e[i];
        grad[i] = q.half * (dot * u / (nu * lu * lv) - q.z[i] / (lu * lv));
    }
}

struct PipeCache {
    std::vector<LayerCache> enc, dec;
    QuantNodeCache q;
    std::size_t batch = 0;
    std::vector<double> output;
};

struct PipeLosses {
    double task = 0.0;
    double commit = 0.0;
    double total = 0.0;
};

inline PipeLosses pipeline_forward(const std::vector<DenseLayer>& enc,
                                   const std::vector<DenseLayer>& dec, const FeatureTensor& x,
                                   const FeatureTensor& target, TaskKind task,
                                   const QuantizerConfig& qcfg, QuantMode mode,
                                   const SurrogateConsts* sc, PipeCache* cache) {
    const std::size_t batch = x.shape().size() == 2 ? x.shape()[0] : 1;
    const std::size_t din = x.shape().size() == 2 ? x.shape()[1] : x.shape()[0];
    std::vector<double> h = x.data();
    std::size_t d = din;

    if (cache) {
        cache->enc.resize(enc.size());
        cache->dec.resize(dec.size());
        cache->batch = batch;
    }
    for (std::size_t i = 0; i < enc.size(); ++i) {
        h = layer_forward(enc[i], h, batch, cache ? &cache->enc[i] : nullptr);
        d = enc[i].out_dim();
    }

    double commit = 0.0;
    if (mode != QuantMode::Off) {
        const double half = (qcfg.levels - 1) / 2.0;
        FeatureTensor ht({batch, d}, std::vector<double>(h));
        QuantNodeCache q;
        q.active = true;
        q.half = half;
        q.form = qcfg.commitment;
        if (mode == QuantMode::Real) {
            QuantizeOutput qo = quantize(ht, qcfg);
            q.e = qo.scaled.data();
            q.z.resize(q.e.size());
            for (std::size_t i = 0; i < q.z.size(); ++i)
                q.z[i] = static_cast<double>(qo.block.indices[i]) - half;
            commit = qo.commit_loss;
            if (qcfg.scaling == ScalingMode::TanhScaling) {
                q.slope.resize(q.e.size());
                for (std::size_t i = 0; i < q.e.size(); ++i) q.slope[i] = 1.0 - q.e[i] * q.e[i];
            } else {
                q.slope.assign(q.e.size(), linear_scale_slope(ht));
            }
            h = qo.reconstructed.data();
        } else {
            // Surrogate: scaling with frozen constants, rounding replaced by
            // the identity, commitment against frozen z0.
            q.e.resize(h.size());
            q.slope.resize(h.size());
            if (sc == nullptr || sc->z0.size() != h.size())
                throw std::invalid_argument("shape mismatch");
            for (std::size_t i = 0; i < h.size(); ++i) {
                if (sc->tanh_mode) {
                    q.e[i] = std::tanh(h[i]);
                    q.slope[i] = 1.0 - q.e[i] * q.e[i];
                } else {
                    q.e[i] = sc->a * h[i] + sc->b;
                    q.slope[i] = sc->a;
                }
            }
            q.z = sc->z0;
            std::vector<double> up(q.e.size());
            for (std::size_t i = 0; i < up.size(); ++i) up[i] = half * q.e[i];
            commit = detail::commit_loss_value(up, q.z, q.form);
            h = q.e;
        }
        if (cache) cache->q = std::move(q);
    } else if (cache) {
        cache->q = QuantNodeCache{};
    }

    for (std::size_t i = 0; i < dec.size(); ++i) {
        h = layer_forward(dec[i], h, batch, cache ? &cache->dec[i] : nullptr);
        d = dec[i].out_dim();
    }

    PipeLosses out;
    if (h.size() != target.size()) throw std::invalid_argument("shape mismatch");
    out.task = task == TaskKind::Autoencoder ? mse_loss(h, target.data())
                                             : ce_loss(h, target.data(), batch);
    out.commit = commit;
    out.total = out.task + qcfg.alpha * commit;
    if (cache) cache->output = std::move(h);
    return out;
}

struct ModelGrads {
    std::vector<LayerGrads> enc, dec;
};

inline void pipeline_backward(const std::vector<DenseLayer>& enc,
                              const std::vector<DenseLayer>& dec, const FeatureTensor& target,
                              TaskKind task, double alpha, const PipeCache& cache,
                              ModelGrads& g) {
    g.enc.resize(enc.size());
    g.dec.resize(dec.size());
    std::vector<double> grad;
    if (task == TaskKind::Autoencoder)
        mse_loss_grad(cache.output, target.data(), grad);
    else
        ce_loss_grad(cache.output, target.data(), cache.batch, grad);

    for (std::size_t i = dec.size(); i-- > 0;)
        grad = layer_backward(dec[i], cache.dec[i], grad, cache.batch, g.dec[i]);

    if (cache.q.active) {
        // Straight-through: the rounding step is the identity in the backward
        // pass, so the task gradient passes through unchanged; the commitment
        // term adds its own pull on e.
        std::vector<double> cg;
        commit_grad(cache.q, cg);
        for (std::size_t i = 0; i < grad.size(); ++i)
            grad[i] = (grad[i] + alpha * cg[i]) * cache.q.slope[i];
    }

    for (std::size_t i = enc.size(); i-- > 0;)
        grad = layer_backward(enc[i], cache.enc[i], grad, cache.batch, g.enc[i]);
}

}  // namespace detail

/// Client part, quantizer, server part in one process: enc(x) is quantized,
/// reconstructed, and fed to dec. Returns the decoder output and the
/// unweighted commitment loss.
inline std::pair<FeatureTensor, double> forward_split(const FeatureTensor& x,
                                                      const std::vector<DenseLayer>& enc,
                                                      const std::vector<DenseLayer>& dec,
                                                      const QuantizerConfig& cfg) {
    cfg.validate();
    if (x.shape().size() > 2) throw std::invalid_argument("shape mismatch");
    const std::size_t batch = x.shape().size() == 2 ? x.shape()[0] : 1;
    std::vector<double> h = x.data();
    std::size_t d = x.shape().size() == 2 ? x.shape()[1] : x.shape()[0];
    for (const DenseLayer& l : enc) {
        h = detail::layer_forward(l, h, batch, nullptr);
        d = l.out_dim();
    }
    QuantizeOutput qo = quantize(FeatureTensor({batch, d}, std::move(h)), cfg);
    h = qo.reconstructed.data();
    for (const DenseLayer& l : dec) {
        h = detail::layer_forward(l, h, batch, nullptr);
        d = l.out_dim();
    }
    std::vector<std::size_t> out_shape =
        x.shape().size() == 2 ? std::vector<std::size_t>{batch, d} : std::vector<std::size_t>{d};
    return {FeatureTensor(std::move(out_shape), std::move(h)), qo.commit_loss};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t batch_size = 16;
    std::size_t epochs = 50;
    double alpha = 0.25;
    std::uint64_t seed = 0;
    QuantizerConfig quantizer;
    TaskKind task = TaskKind::Autoencoder;
    bool use_quantizer = true;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
        if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
        if (epochs == 0) throw std::invalid_argument("epoch count must be positive");
        if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
        quantizer.validate();
    }
};

struct TrainData {
    FeatureTensor inputs;   // [n, d_in]
    FeatureTensor targets;  // [n, d_out]; equals inputs for the autoencoder task
};

struct TrainResult {
    std::vector<DenseLayer> enc, dec;
    std::vector<double> loss_history;    // per-epoch mean total loss
    std::vector<double> task_history;    // per-epoch mean task loss
    std::vector<double> commit_history;  // per-epoch mean commitment loss
};

/// Plain SGD with a straight-through estimator across the quantizer.
/// Deterministic given the seed; throws if the loss goes non-finite, naming
/// the epoch.
inline TrainResult train(const TrainData& data, std::vector<DenseLayer> enc,
                         std::vector<DenseLayer> dec, const TrainConfig& cfg) {
    cfg.validate();
    if (data.inputs.shape().size() != 2 || data.targets.shape().size() != 2 ||
        data.inputs.shape()[0] != data.targets.shape()[0])
        throw std::invalid_argument("shape mismatch");
    const std::size_t n = data.inputs.shape()[0];
    if (n == 0) throw std::invalid_argument("empty input");
    const std::size_t din = data.inputs.shape()[1];
    const std::size_t dout = data.targets.shape()[1];

    QuantizerConfig qcfg = cfg.quantizer;
    qcfg.alpha = cfg.alpha;
    const detail::QuantMode mode =
        cfg.use_quantizer ? detail::QuantMode::Real : detail::QuantMode::Off;

    Rng rng(mix_seed(cfg.seed, 0x7261696eULL));  // shuffle stream
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainResult result;
    result.enc = std::move(enc);
    result.dec = std::move(dec);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i-- > 1;) {
            const std::size_t j = static_cast<std::size_t>(rng.bounded(i + 1));
            std::swap(order[i], order[j]);
        }

        double total_acc = 0.0, task_acc = 0.0, commit_acc = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            std::vector<double> bx(b * din), bt(b * dout);
            for (std::size_t s = 0; s < b; ++s) {
                const std::size_t src = order[start + s];
                std::copy_n(data.inputs.data().begin() + static_cast<std::ptrdiff_t>(src * din),
                            din, bx.begin() + static_cast<std::ptrdiff_t>(s * din));
                std::copy_n(data.targets.data().begin() + static_cast<std::ptrdiff_t>(src * dout),
                            dout, bt.begin() + static_cast<std::ptrdiff_t>(s * dout));
            }
            FeatureTensor xb({b, din}, std::move(bx));
            FeatureTensor tb({b, dout}, std::move(bt));

            detail::PipeCache cache;
            detail::PipeLosses losses = detail::pipeline_forward(
                result.enc, result.dec, xb, tb, cfg.task, qcfg, mode, nullptr, &cache);
            detail::ModelGrads g;
            detail::pipeline_backward(result.enc, result.dec, tb, cfg.task, cfg.alpha, cache, g);

            for (std::size_t li = 0; li < result.enc.size(); ++li) {
                auto& w = result.enc[li].weights.data();
                auto& bb = result.enc[li].bias.data();
                for (std::size_t k = 0; k < w.size(); ++k)
                    w[k] -= cfg.learning_rate * g.enc[li].w[k];
                for (std::size_t k = 0; k < bb.size(); ++k)
                    bb[k] -= cfg.learning_rate * g.enc[li].b[k];
            }
            for (std::size_t li = 0; li < result.dec.size(); ++li) {
                auto& w = result.dec[li].weights.data();
                auto& bb = result.dec[li].bias.data();
                for (std::size_t k = 0; k < w.size(); ++k)
                    w[k] -= cfg.learning_rate * g.dec[li].w[k];
                for (std::size_t k = 0; k < bb.size(); ++k)
                    bb[k] -= cfg.learning_rate * g.dec[li].b[k];
            }

            const double bw = static_cast<double>(b) / static_cast<double>(n);
            total_acc += losses.total * bw;
            task_acc += losses.task * bw;
            commit_acc += losses.commit * bw;
        }

        if (!std::isfinite(total_acc))
            throw std::runtime_error("loss diverged at epoch " + std::to_string(epoch));
        result.loss_history.push_back(total_acc);
        result.task_history.push_back(task_acc);
        result.commit_history.push_back(commit_acc);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t parameter_count = 0;
    double perturbation = 0.0;
};

/// Compares analytic gradients of the straight-through surrogate loss (the
/// rounding step replaced by the identity on e, scale constants and lattice
/// targets frozen) against central finite differences over every parameter.
inline GradCheckReport grad_check(std::vector<DenseLayer> enc, std::vector<DenseLayer> dec,
                                  const TrainConfig& cfg, double perturbation) {
    cfg.validate();
    if (!(perturbation >= 1e-6 && perturbation <= 1e-2))
        throw std::invalid_argument("perturbation out of range");
    if (enc.empty() || dec.empty()) throw std::invalid_argument("empty input");

    QuantizerConfig qcfg = cfg.quantizer;
    qcfg.alpha = cfg.alpha;

    const std::size_t batch = 4;
    const std::size_t din = enc.front().in_dim();
    const std::size_t dout = dec.back().out_dim();
    Rng rng(mix_seed(cfg.seed, 0x67636b00ULL));
    std::vector<double> xv(batch * din);
    for (double& v : xv) v = rng.normal();
    FeatureTensor x({batch, din}, std::move(xv));
    FeatureTensor target;
    if (cfg.task == TaskKind::Autoencoder) {
        std::vector<double> tv(batch * dout);
        for (double& v : tv) v = rng.normal();
        target = FeatureTensor({batch, dout}, std::move(tv));
    } else {
        std::vector<double> tv(batch * dout, 0.0);
        for (std::size_t s = 0; s < batch; ++s)
            tv[s * dout + static_cast<std::size_t>(rng.bounded(dout))] = 1.0;
        target = FeatureTensor({batch, dout}, std::move(tv));
    }

    // Freeze the surrogate constants from one real forward pass at the
    // starting parameters.
    detail::SurrogateConsts sc;
    sc.tanh_mode = qcfg.scaling == ScalingMode::TanhScaling;
    {
        std::vector<double> h = x.data();
        for (const DenseLayer& l : enc) h = detail::layer_forward(l, h, batch, nullptr);
        const std::size_t dmid = h.size() / batch;
        FeatureTensor ht({batch, dmid}, std::move(h));
        if (!sc.tanh_mode) {
            sc.a = detail::linear_scale_slope(ht);
            sc.b = detail::linear_scale_offset(ht, sc.a);
        }
        QuantizeOutput qo = quantize(ht, qcfg);
        const double half = (qcfg.levels - 1) / 2.0;
        sc.z0.resize(qo.block.indices.size());
        for (std::size_t i = 0; i < sc.z0.size(); ++i)
            sc.z0[i] = static_cast<double>(qo.block.indices[i]) - half;
    }

    detail::PipeCache cache;
    detail::pipeline_forward(enc, dec, x, target, cfg.task, qcfg, detail::QuantMode::Surrogate,
                             &sc, &cache);
    detail::ModelGrads g;
    detail::pipeline_backward(enc, dec, target, cfg.task, cfg.alpha, cache, g);

    auto surrogate_loss = [&]() {
        return detail::pipeline_forward(enc, dec, x, target, cfg.task, qcfg,
                                        detail::QuantMode::Surrogate, &sc, nullptr)
            .total;
    };

    GradCheckReport report;
    report.perturbation = perturbation;
    auto check_param = [&](double& p, double analytic) {
        const double save = p;
        p = save + perturbation;
        const double up = surrogate_loss();
        p = save - perturbation;
        const double down = surrogate_loss();
        p = save;
        const double fd = (up - down) / (2.0 * perturbation);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
        report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic - fd) / denom);
        ++report.parameter_count;
    };

    for (std::size_t li = 0; li < enc.size(); ++li) {
        auto& w = enc[li].weights.data();
        for (std::size_t k = 0; k < w.size(); ++k) check_param(w[k], g.enc[li].w[k]);
        auto& b = enc[li].bias.data();
        for (std::size_t k = 0; k < b.size(); ++k) check_param(b[k], g.enc[li].b[k]);
    }
    for (std::size_t li = 0; li < dec.size(); ++li) {
        auto& w = dec[li].weights.data();
        for (std::size_t k = 0; k < w.size(); ++k) check_param(w[k], g.dec[li].w[k]);
        auto& b = dec[li].bias.data();
        for (std::size_t k = 0; k < b.size(); ++k) check_param(b[k], g.dec[li].b[k]);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Gaussian-mixture autoencoder data: three clusters on a 2-D latent plane
/// embedded in dim-dimensional space, with ambient noise orthogonal to the
/// plane where the dimension allows. Targets equal inputs.
inline TrainData make_mixture_data(std::size_t n, std::size_t dim, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("empty input");
    if (dim < 2) throw std::invalid_argument("dim must be >= 2");
    Rng rng(mix_seed(seed, 0x6d697832ULL));
    const double cx[3] = {-1.2, 0.0, 1.2};
    const double cy[3] = {-0.8, 1.1, -0.3};
    std::vector<double> xs(n * dim, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t c = static_cast<std::size_t>(rng.bounded(3));
        const double a = cx[c] + 0.05 * rng.normal();
        const double b = cy[c] + 0.05 * rng.normal();
        xs[s * dim + 0] = 0.8 * a - 0.6 * b;
        xs[s * dim + 1] = 0.6 * a + 0.8 * b;
        if (dim > 2) xs[s * dim + 2] = 0.35 * rng.normal();
        if (dim > 3) xs[s * dim + 3] = 0.35 * rng.normal();
    }
    TrainData d;
    d.inputs = FeatureTensor({n, dim}, xs);
    d.targets = FeatureTensor({n, dim}, std::move(xs));
    return d;
}

/// Two interleaved 2-D arcs with one-hot labels, for the classifier task.
inline TrainData make_two_arcs(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("empty input");
    Rng rng(mix_seed(seed, 0x61726373ULL));
    std::vector<double> xs(n * 2), ts(n * 2, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const bool top = rng.bounded(2) == 0;
        const double theta = rng.uniform(0.0, 3.14159265358979323846);
        double px, py;
        if (top) {
            px = std::cos(theta);
            py = std::sin(theta);
        } else {
            px = 1.0 - std::cos(theta);
            py = 0.5 - std::sin(theta);
        }
        xs[s * 2] = px + 0.1 * rng.normal();
        xs[s * 2 + 1] = py + 0.1 * rng.normal();
        ts[s * 2 + (top ? 0 : 1)] = 1.0;
    }
    TrainData d;
    d.inputs = FeatureTensor({n, 2}, std::move(xs));
    d.targets = FeatureTensor({n, 2}, std::move(ts));
    return d;
}

// ---------------------------------------------------------------------------
// Model persistence (tensor fixture blocks)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_layers(std::ostream& os, const std::vector<DenseLayer>& layers) {
    std::vector<std::uint8_t> buf;
    bytes::put_u32le(buf, static_cast<std::uint32_t>(layers.size()));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (const DenseLayer& l : layers) {
        buf.clear();
        bytes::put_u32le(buf, static_cast<std::uint32_t>(l.activation));
        os.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size()));
        write_tensor(os, l.weights);
        write_tensor(os, l.bias);
    }
}

inline std::vector<DenseLayer> read_layers(std::istream& is) {
    char raw[4];
    if (!is.read(raw, 4)) throw std::runtime_error("truncated payload");
    bytes::Reader r(reinterpret_cast<const std::uint8_t*>(raw), 4);
    const std::uint32_t count = r.u32le();
    if (count > 64) throw std::runtime_error("layer count out of range");
    std::vector<DenseLayer> layers(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!is.read(raw, 4)) throw std::runtime_error("truncated payload");
        bytes::Reader ar(reinterpret_cast<const std::uint8_t*>(raw), 4);
        const std::uint32_t act = ar.u32le();
        if (act > 2) throw std::runtime_error("unknown activation");
        layers[i].activation = static_cast<Activation>(act);
        layers[i].weights = read_tensor(is);
        layers[i].bias = read_tensor(is);
        layers[i].validate();
    }
    return layers;
}

}  // namespace detail

/// File layout: encoder layer list then decoder layer list; each list is a
/// u32 count followed by per-layer u32 activation + weights + bias tensors in
/// the fixture format.
inline void save_model(const std::string& path, const std::vector<DenseLayer>& enc,
                       const std::vector<DenseLayer>& dec) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open file: " + path);
    detail::write_layers(os, enc);
    detail::write_layers(os, dec);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::pair<std::vector<DenseLayer>, std::vector<DenseLayer>> load_model(
    const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open file: " + path);
    auto enc = detail::read_layers(is);
    auto dec = detail::read_layers(is);
    return {std::move(enc), std::move(dec)};
}

}  // namespace splitquant
