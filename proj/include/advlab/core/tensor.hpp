#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "advlab/core/error.hpp"
#include "advlab/core/rng.hpp"

namespace advlab {

// Dense row-major float tensor. Images are [C,H,W], embeddings [L,D],
// scalars [1]. Kept deliberately simple; all numerics live in ops.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shp, float fill = 0.0f) : shape(std::move(shp)) {
        data.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static int64_t numel_of(const std::vector<int>& shp) {
        int64_t n = 1;
        for (int d : shp) {
            if (d < 0) throw ShapeError("negative tensor dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp), 0.0f); }
    static Tensor full(std::vector<int> shp, float v) { return Tensor(std::move(shp), v); }

    static Tensor scalar(float v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static Tensor randn(std::vector<int> shp, Rng& rng, float stddev = 1.0f) {
        Tensor t(std::move(shp));
        for (auto& v : t.data) v = static_cast<float>(rng.normal() * stddev);
        return t;
    }

    static Tensor uniform(std::vector<int> shp, Rng& rng, float lo, float hi) {
        Tensor t(std::move(shp));
        for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor from_values(std::vector<int> shp, std::initializer_list<float> vals) {
        Tensor t(std::move(shp));
        if (static_cast<int64_t>(vals.size()) != t.numel()) throw ShapeError("from_values size mismatch");
        std::copy(vals.begin(), vals.end(), t.data.begin());
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool empty() const { return data.empty(); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // [C,H,W] accessor
    float& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    float at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // [R,C] accessor
    float& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    float at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    float min_value() const {
        float m = data.empty() ? 0.0f : data[0];
        for (float v : data) m = std::min(m, v);
        return m;
    }
    float max_value() const {
        float m = data.empty() ? 0.0f : data[0];
        for (float v : data) m = std::max(m, v);
        return m;
    }

    double sum_double() const {
        double s = 0.0;
        for (float v : data) s += v;
        return s;
    }
    double mean_double() const { return data.empty() ? 0.0 : sum_double() / static_cast<double>(data.size()); }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

// peak signal-to-noise ratio in dB for [0,1] images
inline double psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace advlab
