#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "splitquant/random.hpp"
#include "splitquant/tensor.hpp"

namespace splitquant {

/// Sparse view of a feature vector: the k surviving entries, sorted by index.
struct SparseFeatures {
    std::size_t dims = 0;
    std::vector<std::uint32_t> indices;
    std::vector<double> values;

    std::size_t k() const { return indices.size(); }
};

/// Keep the k largest-magnitude entries of x (ties break toward the lower
/// index). With probability epsilon each kept slot is replaced by an entry
/// drawn uniformly from outside the top-k set; replacement indices are never
/// duplicated, so once the outside pool is exhausted remaining slots keep
/// their top-k entry. Entries come back sorted by index.
inline SparseFeatures topk_sparsify(std::span<const double> x, std::size_t k, double epsilon,
                                    Rng& rng) {
    if (x.empty()) throw std::invalid_argument("empty input");
    if (k == 0 || k > x.size()) throw std::invalid_argument("invalid k");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon out of range");

    std::vector<std::uint32_t> order(x.size());
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&x](std::uint32_t a, std::uint32_t b) {
                          const double ma = std::abs(x[a]);
                          const double mb = std::abs(x[b]);
                          if (ma != mb) return ma > mb;
                          return a < b;
                      });

    std::vector<std::uint32_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());

    std::vector<std::uint32_t> pool(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(pool.begin(), pool.end());

    if (epsilon > 0.0) {
        for (std::uint32_t& idx : chosen) {
            if (pool.empty()) break;
            if (rng.uniform01() < epsilon) {
                const std::size_t pick = static_cast<std::size_t>(rng.bounded(pool.size()));
                idx = pool[pick];
                pool[pick] = pool.back();
                pool.pop_back();
            }
        }
        std::sort(chosen.begin(), chosen.end());
    }

    SparseFeatures s;
    s.dims = x.size();
    s.indices = std::move(chosen);
    s.values.reserve(k);
    for (std::uint32_t idx : s.indices) s.values.push_back(x[idx]);
    return s;
}

inline SparseFeatures topk_sparsify(const FeatureTensor& t, std::size_t k, double epsilon,
                                    Rng& rng) {
    return topk_sparsify(std::span<const double>(t.data()), k, epsilon, rng);
}

/// Expand back to a dense flat tensor, zero everywhere the sparse view has no
/// entry.
inline FeatureTensor densify(const SparseFeatures& s) {
    if (s.dims == 0) throw std::invalid_argument("empty input");
    if (s.indices.size() != s.values.size()) throw std::invalid_argument("length mismatch");
    std::vector<double> out(s.dims, 0.0);
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
        if (s.indices[i] >= s.dims) throw std::invalid_argument("index out of range");
        out[s.indices[i]] = s.values[i];
    }
    return FeatureTensor::flat(std::move(out));
}

/// Idealized payload cost of a sparse message: one FP16 value plus a
/// ceil(log2(dims))-bit index per surviving entry.
inline std::size_t topk_wire_bits(std::size_t k, std::size_t dims) {
    if (k == 0 || dims == 0 || k > dims) throw std::invalid_argument("invalid k");
    const std::size_t index_bits =
        dims == 1 ? 0 : static_cast<std::size_t>(std::bit_width(dims - 1));
    return k * (16 + index_bits);
}

}  // namespace splitquant
