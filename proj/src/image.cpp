#include "gsopt/image.hpp"

#include <cmath>
#include <limits>

namespace gsopt {

void axpby(double a, const Image& x, double b, Image& y) {
    require(x.same_shape(y), "axpby: shape mismatch");
    const double* xs = x.data();
    double* ys = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) ys[i] = a * xs[i] + b * ys[i];
}

double mse(const Image& a, const Image& b) {
    require(a.same_shape(b), "mse: shape mismatch");
    require(!a.empty(), "mse: empty image");
    double acc = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = pa[i] - pb[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b, double peak) {
    const double m = mse(a, b);
    if (m <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

Image resize_nearest(const Image& src, int out_h, int out_w) {
    require(out_h > 0 && out_w > 0, "resize_nearest: non-positive output shape");
    require(!src.empty(), "resize_nearest: empty source");
    Image out(out_h, out_w, src.channels());
    for (int y = 0; y < out_h; ++y) {
        int sy = static_cast<int>((y + 0.5) * src.height() / out_h);
        sy = std::min(sy, src.height() - 1);
        for (int x = 0; x < out_w; ++x) {
            int sx = static_cast<int>((x + 0.5) * src.width() / out_w);
            sx = std::min(sx, src.width() - 1);
            for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(sy, sx, c);
        }
    }
    return out;
}

} // namespace gsopt
