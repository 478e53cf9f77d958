#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitquant/bytes.hpp"

namespace splitquant {

/// Dense real-valued tensor of rank 1..3, row-major, interpreted as
/// batch x tokens x dims. Values are held at double precision internally;
/// the on-disk fixture format (see read/write below) stores 32-bit floats.
class FeatureTensor {
public:
    FeatureTensor() = default;

    FeatureTensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate();
    }

    /// Rank-1 tensor over the given values.
    static FeatureTensor flat(std::vector<double> data) {
        std::vector<std::size_t> shape{data.size()};
        return FeatureTensor(std::move(shape), std::move(data));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    bool same_shape(const FeatureTensor& other) const { return shape_ == other.shape_; }

private:
    void validate() const {
        if (shape_.empty() || shape_.size() > 3)
            throw std::invalid_argument("tensor rank must be 1..3");
        std::size_t n = 1;
        for (std::size_t d : shape_) {
            if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
            n *= d;
        }
        if (n != data_.size())
            throw std::invalid_argument("tensor shape does not match element count");
        for (double v : data_)
            if (!std::isfinite(v)) throw std::invalid_argument("tensor elements must be finite");
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Population statistics (divisor n) over every element of a tensor.
struct TensorStats {
    double mean = 0.0;
    double std = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t count = 0;
};

inline TensorStats stats(const FeatureTensor& t) {
    if (t.empty()) throw std::invalid_argument("empty input");
    const auto& d = t.data();
    TensorStats s;
    s.count = d.size();
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (double v : d) {
        sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.mean = sum / static_cast<double>(s.count);
    double sq = 0.0;
    for (double v : d) {
        double dv = v - s.mean;
        sq += dv * dv;
    }
    s.std = std::sqrt(std::max(0.0, sq / static_cast<double>(s.count)));
    return s;
}

/// Elementwise clamp to [lo, hi]; shape preserved.
inline FeatureTensor clip(const FeatureTensor& t, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("invalid bound");
    std::vector<double> out(t.data());
    for (double& v : out) v = std::clamp(v, lo, hi);
    return FeatureTensor(t.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Tensor fixture format: u32 rank, u32 dims[rank], then little-endian IEEE-754
// 32-bit floats in row-major order. Used for test fixtures, CLI input/output
// and saved model parameters.
// ---------------------------------------------------------------------------

inline void write_tensor(std::ostream& os, const FeatureTensor& t) {
    std::vector<std::uint8_t> buf;
    bytes::put_u32le(buf, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) bytes::put_u32le(buf, static_cast<std::uint32_t>(d));
    for (double v : t.data()) bytes::put_f32le(buf, static_cast<float>(v));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("tensor write failed");
}

inline FeatureTensor read_tensor(std::istream& is) {
    auto read_u32 = [&is]() {
        std::uint8_t b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw std::runtime_error("tensor read failed: truncated header");
        return static_cast<std::uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) | (b[3] << 24));
    };
    std::uint32_t rank = read_u32();
    if (rank == 0 || rank > 3) throw std::runtime_error("tensor read failed: bad rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = read_u32();
        if (shape[i] == 0) throw std::runtime_error("tensor read failed: zero dimension");
        n *= shape[i];
    }
    std::vector<std::uint8_t> raw(n * 4);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw std::runtime_error("tensor read failed: truncated data");
    bytes::Reader r(raw.data(), raw.size());
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(r.f32le());
    return FeatureTensor(std::move(shape), std::move(data));
}

inline void save_tensor_file(const std::string& path, const FeatureTensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_tensor(os, t);
}

inline FeatureTensor load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return read_tensor(is);
}

}  // namespace splitquant
