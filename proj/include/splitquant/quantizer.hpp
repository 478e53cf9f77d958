#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "splitquant/tensor.hpp"

namespace splitquant {

enum class ScalingMode { TanhScaling, ClippedLinearScaling };
enum class CommitmentForm { CosineForm, SquaredForm };

struct QuantizerConfig {
    int levels = 4;  // K, number of discrete representation levels
    ScalingMode scaling = ScalingMode::ClippedLinearScaling;
    CommitmentForm commitment = CommitmentForm::CosineForm;
    double alpha = 0.25;  // commitment weight

    void validate() const {
        if (levels < 2) throw std::invalid_argument("level count must be >= 2");
        if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
    }
};

/// Client-side product of quantization: the level indices that cross the wire.
struct QuantizedBlock {
    int levels = 0;
    std::vector<std::size_t> shape;
    std::vector<std::uint32_t> indices;  // each in {0 .. levels-1}
};

struct QuantizeOutput {
    QuantizedBlock block;
    FeatureTensor reconstructed;  // C, on the level lattice in [-1, 1]
    double commit_loss = 0.0;     // unweighted
    FeatureTensor scaled;         // e, pre-rounding scaled features
};

/// Clip to [mean - 3*std, mean + 3*std], then map the clipped range affinely
/// onto [-1, 1]. A constant tensor (degenerate range) maps to all zeros.
inline FeatureTensor scale_linear(const FeatureTensor& t) {
    TensorStats s = stats(t);  // throws on empty input
    FeatureTensor clipped = clip(t, s.mean - 3.0 * s.std, s.mean + 3.0 * s.std);
    TensorStats cs = stats(clipped);
    std::vector<double> out(clipped.data());
    double range = cs.max - cs.min;
    if (range == 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
    } else {
        for (double& v : out) v = 2.0 * ((v - cs.min) / range) - 1.0;
    }
    return FeatureTensor(t.shape(), std::move(out));
}

/// Elementwise tanh; output in (-1, 1).
inline FeatureTensor scale_tanh(const FeatureTensor& t) {
    if (t.empty()) throw std::invalid_argument("empty input");
    std::vector<double> out(t.data());
    for (double& v : out) v = std::tanh(v);
    return FeatureTensor(t.shape(), std::move(out));
}

inline FeatureTensor apply_scaling(const FeatureTensor& t, ScalingMode mode) {
    return mode == ScalingMode::TanhScaling ? scale_tanh(t) : scale_linear(t);
}

/// Rounds scaled values e in [-1, 1] to the symmetric level lattice z.
/// Odd K:  z = round((K-1)/2 * e), integers.
/// Even K: z = round((K-1)/2 * e - 0.5) + 0.5, half-integers.
/// Ties round half away from zero (std::round); z is clamped to
/// [-(K-1)/2, (K-1)/2] so boundary inputs never leave the lattice.
inline FeatureTensor round_levels(const FeatureTensor& e, int levels) {
    if (levels < 2) throw std::invalid_argument("level count must be >= 2");
    const double half = (levels - 1) / 2.0;
    const bool odd = (levels % 2) != 0;
    std::vector<double> out(e.data());
    for (double& v : out) {
        double z = odd ? std::round(half * v) : std::round(half * v - 0.5) + 0.5;
        v = std::clamp(z, -half, half);
    }
    return FeatureTensor(e.shape(), std::move(out));
}

namespace detail {

inline double commit_loss_value(const std::vector<double>& scaled_up,
                                const std::vector<double>& z, CommitmentForm form) {
    const std::size_t n = z.size();
    if (form == CommitmentForm::SquaredForm) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = scaled_up[i] - z[i];
            acc += d * d;
        }
        return acc / static_cast<double>(n);
    }
    // CosineForm: 1 - cos((K-1)/2 * e, z) over the flattened vectors.
    double dot = 0.0, na = 0.0, nz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += scaled_up[i] * z[i];
        na += scaled_up[i] * scaled_up[i];
        nz += z[i] * z[i];
    }
    if (na == 0.0 || nz == 0.0) {
        // Degenerate direction: identical zero vectors are perfectly aligned,
        // anything else gets the worst score.
        return (na == 0.0 && nz == 0.0) ? 0.0 : 1.0;
    }
    return 1.0 - dot / std::sqrt(na * nz);
}

}  // namespace detail

/// Full client-side quantization: scale, round to levels, emit indices, and
/// compute the commitment loss with z treated as a constant.
inline QuantizeOutput quantize(const FeatureTensor& t, const QuantizerConfig& cfg) {
    cfg.validate();
    FeatureTensor e = apply_scaling(t, cfg.scaling);
    FeatureTensor z = round_levels(e, cfg.levels);

    const double half = (cfg.levels - 1) / 2.0;
    const std::size_t n = z.size();

    QuantizeOutput out;
    out.block.levels = cfg.levels;
    out.block.shape = t.shape();
    out.block.indices.resize(n);
    std::vector<double> recon(n);
    std::vector<double> scaled_up(n);
    for (std::size_t i = 0; i < n; ++i) {
        double idx = z[i] + half;  // exact small integer
        out.block.indices[i] = static_cast<std::uint32_t>(std::llround(idx));
        recon[i] = z[i] / half;
        scaled_up[i] = half * e[i];
    }
    out.reconstructed = FeatureTensor(t.shape(), std::move(recon));
    out.commit_loss = detail::commit_loss_value(scaled_up, z.data(), cfg.commitment);
    out.scaled = std::move(e);
    return out;
}

/// Server-side inverse: C = (I - (K-1)/2) / ((K-1)/2), reshaped to the
/// original shape. Only K and the indices are needed.
inline FeatureTensor reconstruct(const QuantizedBlock& block) {
    if (block.levels < 2) throw std::invalid_argument("level count must be >= 2");
    std::size_t n = 1;
    for (std::size_t d : block.shape) n *= d;
    if (block.shape.empty() || n != block.indices.size())
        throw std::invalid_argument("corrupt block: shape/index count mismatch");
    const double half = (block.levels - 1) / 2.0;
    std::vector<double> out(block.indices.size());
    for (std::size_t i = 0; i < block.indices.size(); ++i) {
        if (block.indices[i] >= static_cast<std::uint32_t>(block.levels))
            throw std::invalid_argument("corrupt block: index out of range");
        out[i] = (static_cast<double>(block.indices[i]) - half) / half;
    }
    return FeatureTensor(block.shape, std::move(out));
}

}  // namespace splitquant
