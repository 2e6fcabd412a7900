#include "gsopt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gsopt {

Tensor3 image_to_tensor(const Image& image) {
    require(image.channels() == 3, "image_to_tensor: need a 3-channel image");
    Tensor3 t(3, image.height(), image.width());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = image.at(y, x, c);
    return t;
}

Image tensor_to_image(const Tensor3& tensor) {
    require(tensor.c == 3, "tensor_to_image: need a 3-channel tensor");
    Image img(tensor.h, tensor.w, 3);
    for (int y = 0; y < tensor.h; ++y)
        for (int x = 0; x < tensor.w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = tensor.at(c, y, x);
    return img;
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_)
    : in_c(in_channels), out_c(out_channels), k(kernel), stride(stride_), pad(pad_) {
    const std::size_t nw = std::size_t(out_c) * in_c * k * k;
    w.assign(nw, 0.0);
    b.assign(out_c, 0.0);
    dw.assign(nw, 0.0);
    db.assign(out_c, 0.0);
}

void Conv2d::init_random(Rng& rng, double gain) {
    std::normal_distribution<double> nd(0.0, gain / std::sqrt(double(in_c) * k * k));
    for (double& v : w) v = nd(rng);
    std::fill(b.begin(), b.end(), 0.0);
}

void Conv2d::init_zero() {
    std::fill(w.begin(), w.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
}

void Conv2d::copy_weights_from(const Conv2d& other) {
    require(in_c == other.in_c && out_c == other.out_c && k == other.k,
            "Conv2d: shape mismatch in weight copy");
    w = other.w;
    b = other.b;
}

Tensor3 Conv2d::forward(const Tensor3& x) const {
    require(x.c == in_c, "Conv2d: input channel mismatch");
    Tensor3 y(out_c, out_h(x.h), out_w(x.w));
    for (int oc = 0; oc < out_c; ++oc) {
        for (int oy = 0; oy < y.h; ++oy) {
            for (int ox = 0; ox < y.w; ++ox) {
                double acc = b[oc];
                for (int ic = 0; ic < in_c; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= x.w) continue;
                            acc += w[((std::size_t(oc) * in_c + ic) * k + ky) * k + kx] *
                                   x.at(ic, iy, ix);
                        }
                    }
                }
                y.at(oc, oy, ox) = acc;
            }
        }
    }
    return y;
}

Tensor3 Conv2d::backward(const Tensor3& x, const Tensor3& gy) {
    require(x.c == in_c && gy.c == out_c, "Conv2d backward: channel mismatch");
    require(gy.h == out_h(x.h) && gy.w == out_w(x.w), "Conv2d backward: shape mismatch");
    Tensor3 gx(x.c, x.h, x.w);
    for (int oc = 0; oc < out_c; ++oc) {
        for (int oy = 0; oy < gy.h; ++oy) {
            for (int ox = 0; ox < gy.w; ++ox) {
                const double g = gy.at(oc, oy, ox);
                if (g == 0.0) continue;
                db[oc] += g;
                for (int ic = 0; ic < in_c; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= x.w) continue;
                            const std::size_t wi =
                                ((std::size_t(oc) * in_c + ic) * k + ky) * k + kx;
                            dw[wi] += g * x.at(ic, iy, ix);
                            gx.at(ic, iy, ix) += g * w[wi];
                        }
                    }
                }
            }
        }
    }
    return gx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", &w, &dw});
    out.push_back({prefix + ".b", &b, &db});
}

Linear::Linear(int in_features, int out_features) : in_n(in_features), out_n(out_features) {
    w.assign(std::size_t(out_n) * in_n, 0.0);
    b.assign(out_n, 0.0);
    dw.assign(w.size(), 0.0);
    db.assign(out_n, 0.0);
}

void Linear::init_random(Rng& rng, double gain) {
    std::normal_distribution<double> nd(0.0, gain / std::sqrt(double(in_n)));
    for (double& v : w) v = nd(rng);
    std::fill(b.begin(), b.end(), 0.0);
}

void Linear::init_zero() {
    std::fill(w.begin(), w.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
}

void Linear::copy_weights_from(const Linear& other) {
    require(in_n == other.in_n && out_n == other.out_n, "Linear: shape mismatch in weight copy");
    w = other.w;
    b = other.b;
}

std::vector<double> Linear::forward(const std::vector<double>& x) const {
    require(static_cast<int>(x.size()) == in_n, "Linear: input size mismatch");
    std::vector<double> y(out_n);
    for (int o = 0; o < out_n; ++o) {
        double acc = b[o];
        for (int i = 0; i < in_n; ++i) acc += w[std::size_t(o) * in_n + i] * x[i];
        y[o] = acc;
    }
    return y;
}

std::vector<double> Linear::backward(const std::vector<double>& x,
                                     const std::vector<double>& gy) {
    require(static_cast<int>(x.size()) == in_n && static_cast<int>(gy.size()) == out_n,
            "Linear backward: size mismatch");
    std::vector<double> gx(in_n, 0.0);
    for (int o = 0; o < out_n; ++o) {
        const double g = gy[o];
        db[o] += g;
        for (int i = 0; i < in_n; ++i) {
            dw[std::size_t(o) * in_n + i] += g * x[i];
            gx[i] += g * w[std::size_t(o) * in_n + i];
        }
    }
    return gx;
}

void Linear::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", &w, &dw});
    out.push_back({prefix + ".b", &b, &db});
}

namespace {
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
} // namespace

Tensor3 silu(const Tensor3& x) {
    Tensor3 y = x;
    for (double& v : y.data) v *= sigmoid(v);
    return y;
}

Tensor3 silu_backward(const Tensor3& x, const Tensor3& gy) {
    require(x.same_shape(gy), "silu_backward: shape mismatch");
    Tensor3 gx = x;
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
        const double s = sigmoid(x.data[i]);
        gx.data[i] = gy.data[i] * (s + x.data[i] * s * (1.0 - s));
    }
    return gx;
}

std::vector<double> silu(const std::vector<double>& x) {
    std::vector<double> y = x;
    for (double& v : y) v *= sigmoid(v);
    return y;
}

std::vector<double> silu_backward(const std::vector<double>& x, const std::vector<double>& gy) {
    require(x.size() == gy.size(), "silu_backward: size mismatch");
    std::vector<double> gx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = sigmoid(x[i]);
        gx[i] = gy[i] * (s + x[i] * s * (1.0 - s));
    }
    return gx;
}

std::vector<double> sinusoidal_embedding(int t, int dim) {
    require(dim > 0 && dim % 2 == 0, "sinusoidal_embedding: dim must be positive and even");
    std::vector<double> e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e[2 * i] = std::sin(t * freq);
        e[2 * i + 1] = std::cos(t * freq);
    }
    return e;
}

std::vector<double> mean_pool(const Tensor3& x) {
    std::vector<double> y(x.c, 0.0);
    const double inv = 1.0 / (double(x.h) * x.w);
    for (int c = 0; c < x.c; ++c) {
        double acc = 0.0;
        for (int yi = 0; yi < x.h; ++yi)
            for (int xi = 0; xi < x.w; ++xi) acc += x.at(c, yi, xi);
        y[c] = acc * inv;
    }
    return y;
}

Tensor3 mean_pool_backward(const Tensor3& x, const std::vector<double>& gy) {
    require(static_cast<int>(gy.size()) == x.c, "mean_pool_backward: size mismatch");
    Tensor3 gx(x.c, x.h, x.w);
    const double inv = 1.0 / (double(x.h) * x.w);
    for (int c = 0; c < x.c; ++c) {
        const double g = gy[c] * inv;
        for (int yi = 0; yi < x.h; ++yi)
            for (int xi = 0; xi < x.w; ++xi) gx.at(c, yi, xi) = g;
    }
    return gx;
}

} // namespace gsopt
