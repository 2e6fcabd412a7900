#pragma once

#include "gsopt/common.hpp"

#include <vector>

namespace gsopt {

/// Dense H x W x C image, row-major with interleaved channels, double storage.
/// All rendering, loss, and distillation plumbing moves these around.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0)
        : h_(height), w_(width), c_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {
        require(height >= 0 && width >= 0 && channels >= 0, "Image: negative shape");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int y, int x, int c) {
        return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c];
    }
    double at(int y, int x, int c) const {
        return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }

    bool same_shape(const Image& o) const {
        return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

/// y = a*x + b*y elementwise; shapes must match.
void axpby(double a, const Image& x, double b, Image& y);

double mse(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b, double peak = 1.0);

/// Nearest-neighbour resize used by the toy-latent bridge.
Image resize_nearest(const Image& src, int out_h, int out_w);

} // namespace gsopt
