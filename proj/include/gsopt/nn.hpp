#pragma once

#include "gsopt/common.hpp"
#include "gsopt/image.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace gsopt {

/// Dense CHW tensor of doubles.
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(std::size_t(c_) * h_ * w_, 0.0) {}

    double& at(int ci, int yi, int xi) { return data[(std::size_t(ci) * h + yi) * w + xi]; }
    double at(int ci, int yi, int xi) const { return data[(std::size_t(ci) * h + yi) * w + xi]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor3& o) const { return c == o.c && h == o.h && w == o.w; }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

/// HxWx3 image to 3xHxW tensor and back (channel count must be 3).
Tensor3 image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor3& tensor);

/// Reference to one parameter array and its gradient, for the optimizer and
/// the weight archive.
struct ParamRef {
    std::string name;
    std::vector<double>* value = nullptr;
    std::vector<double>* grad = nullptr;
};

/// 2D convolution, square kernel, zero padding.
struct Conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    std::vector<double> w;  ///< out_c * in_c * k * k
    std::vector<double> b;  ///< out_c
    std::vector<double> dw, db;

    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_);

    /// Kaiming-style normal init with gain / sqrt(fan_in).
    void init_random(Rng& rng, double gain = 1.0);
    void init_zero();
    void copy_weights_from(const Conv2d& other);

    int out_h(int in_h) const { return (in_h + 2 * pad - k) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad - k) / stride + 1; }

    Tensor3 forward(const Tensor3& x) const;
    /// Accumulates dw/db and returns the input gradient.
    Tensor3 backward(const Tensor3& x, const Tensor3& gy);

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Fully connected layer on flat vectors.
struct Linear {
    int in_n = 0, out_n = 0;
    std::vector<double> w;  ///< out_n * in_n
    std::vector<double> b;  ///< out_n
    std::vector<double> dw, db;

    Linear() = default;
    Linear(int in_features, int out_features);

    void init_random(Rng& rng, double gain = 1.0);
    void init_zero();
    void copy_weights_from(const Linear& other);

    std::vector<double> forward(const std::vector<double>& x) const;
    std::vector<double> backward(const std::vector<double>& x, const std::vector<double>& gy);

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

/// x * sigmoid(x), elementwise.
Tensor3 silu(const Tensor3& x);
Tensor3 silu_backward(const Tensor3& x, const Tensor3& gy);
std::vector<double> silu(const std::vector<double>& x);
std::vector<double> silu_backward(const std::vector<double>& x, const std::vector<double>& gy);

/// Sinusoidal position embedding of an integer timestep; dim must be even.
std::vector<double> sinusoidal_embedding(int t, int dim);

/// Mean over the spatial dimensions, one value per channel.
std::vector<double> mean_pool(const Tensor3& x);
Tensor3 mean_pool_backward(const Tensor3& x, const std::vector<double>& gy);

} // namespace gsopt
