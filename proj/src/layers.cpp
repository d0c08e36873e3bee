#include "demseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace demseg::layers {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void fill_plane(double* p, int count, double value) {
    for (int i = 0; i < count; ++i) p[i] = value;
}

// y plane += 3-wide horizontal stencil of x plane, one kernel row.
void accumulate_row3(double* yr, const double* xr, double k0, double k1, double k2, int w) {
    if (w == 1) {
        yr[0] += k1 * xr[0];
        return;
    }
    yr[0] += k1 * xr[0] + k2 * xr[1];
    for (int j = 1; j < w - 1; ++j)
        yr[j] += k0 * xr[j - 1] + k1 * xr[j] + k2 * xr[j + 1];
    yr[w - 1] += k0 * xr[w - 2] + k1 * xr[w - 1];
}

// Shared 3x3 correlation core: out[n,co] += sum_ci stencil(kernel[co][ci], in[n,ci]).
void conv3x3_core(const Tensor4& x, const Tensor4& k, Tensor4& y,
                  const std::vector<double>* bias) {
    const int h = x.h, w = x.w;
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < y.c; ++co) {
            double* yp = y.plane(n, co);
            fill_plane(yp, h * w, bias ? (*bias)[co] : 0.0);
            for (int ci = 0; ci < x.c; ++ci) {
                const double* xp = x.plane(n, ci);
                const double* kp = &k.v[(static_cast<std::size_t>(co) * x.c + ci) * 9];
                for (int ky = 0; ky < 3; ++ky) {
                    const int i0 = std::max(0, 1 - ky);
                    const int i1 = std::min(h - 1, h - ky);
                    for (int i = i0; i <= i1; ++i)
                        accumulate_row3(yp + static_cast<std::size_t>(i) * w,
                                        xp + static_cast<std::size_t>(i + ky - 1) * w,
                                        kp[ky * 3], kp[ky * 3 + 1], kp[ky * 3 + 2], w);
                }
            }
        }
    }
}

}  // namespace

Tensor4 conv3x3_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias) {
    require(k.h == 3 && k.w == 3 && k.c == x.c, "conv3x3: kernel/input channel mismatch");
    require(bias.size() == static_cast<std::size_t>(k.n), "conv3x3: bias size mismatch");
    Tensor4 y(x.n, k.n, x.h, x.w);
    conv3x3_core(x, k, y, &bias);
    return y;
}

void conv3x3_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                      Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias) {
    require(grad_y.n == x.n && grad_y.c == k.n && grad_y.h == x.h && grad_y.w == x.w,
            "conv3x3 backward: grad shape mismatch");
    const int h = x.h, w = x.w;

    grad_bias.assign(k.n, 0.0);
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < k.n; ++co) {
            const double* gp = grad_y.plane(n, co);
            double acc = 0.0;
            for (int i = 0; i < h * w; ++i) acc += gp[i];
            grad_bias[co] += acc;
        }

    grad_k = Tensor4(k.n, k.c, 3, 3);
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < k.n; ++co) {
            const double* gp = grad_y.plane(n, co);
            for (int ci = 0; ci < x.c; ++ci) {
                const double* xp = x.plane(n, ci);
                double* gk = &grad_k.v[(static_cast<std::size_t>(co) * x.c + ci) * 9];
                for (int ky = 0; ky < 3; ++ky) {
                    const int i0 = std::max(0, 1 - ky);
                    const int i1 = std::min(h - 1, h - ky);
                    double a0 = 0.0, a1 = 0.0, a2 = 0.0;
                    for (int i = i0; i <= i1; ++i) {
                        const double* gr = gp + static_cast<std::size_t>(i) * w;
                        const double* xr = xp + static_cast<std::size_t>(i + ky - 1) * w;
                        for (int j = 1; j < w; ++j) a0 += gr[j] * xr[j - 1];
                        for (int j = 0; j < w; ++j) a1 += gr[j] * xr[j];
                        for (int j = 0; j < w - 1; ++j) a2 += gr[j] * xr[j + 1];
                    }
                    gk[ky * 3] += a0;
                    gk[ky * 3 + 1] += a1;
                    gk[ky * 3 + 2] += a2;
                }
            }
        }
    }

    // grad_x = correlation of grad_y with the flipped, channel-transposed kernel
    Tensor4 kt(x.c, k.n, 3, 3);
    for (int co = 0; co < k.n; ++co)
        for (int ci = 0; ci < x.c; ++ci)
            for (int u = 0; u < 3; ++u)
                for (int v = 0; v < 3; ++v)
                    kt.v[(static_cast<std::size_t>(ci) * k.n + co) * 9 + u * 3 + v] =
                        k.v[(static_cast<std::size_t>(co) * x.c + ci) * 9 + (2 - u) * 3 + (2 - v)];
    grad_x = Tensor4(x.n, x.c, h, w);
    conv3x3_core(grad_y, kt, grad_x, nullptr);
}

Tensor4 conv2x2s2_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias) {
    require(k.h == 2 && k.w == 2 && k.c == x.c, "conv2x2s2: kernel/input channel mismatch");
    require(x.h % 2 == 0 && x.w % 2 == 0, "conv2x2s2: H and W must be even");
    require(bias.size() == static_cast<std::size_t>(k.n), "conv2x2s2: bias size mismatch");
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor4 y(x.n, k.n, oh, ow);
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < k.n; ++co) {
            double* yp = y.plane(n, co);
            fill_plane(yp, oh * ow, bias[co]);
            for (int ci = 0; ci < x.c; ++ci) {
                const double* xp = x.plane(n, ci);
                const double* kp = &k.v[(static_cast<std::size_t>(co) * x.c + ci) * 4];
                for (int i = 0; i < oh; ++i) {
                    const double* r0 = xp + static_cast<std::size_t>(2 * i) * x.w;
                    const double* r1 = r0 + x.w;
                    double* yr = yp + static_cast<std::size_t>(i) * ow;
                    for (int j = 0; j < ow; ++j)
                        yr[j] += kp[0] * r0[2 * j] + kp[1] * r0[2 * j + 1] +
                                 kp[2] * r1[2 * j] + kp[3] * r1[2 * j + 1];
                }
            }
        }
    return y;
}

void conv2x2s2_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                        Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias) {
    const int oh = x.h / 2, ow = x.w / 2;
    require(grad_y.n == x.n && grad_y.c == k.n && grad_y.h == oh && grad_y.w == ow,
            "conv2x2s2 backward: grad shape mismatch");
    grad_x = Tensor4(x.n, x.c, x.h, x.w);
    grad_k = Tensor4(k.n, k.c, 2, 2);
    grad_bias.assign(k.n, 0.0);
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < k.n; ++co) {
            const double* gp = grad_y.plane(n, co);
            for (int i = 0; i < oh * ow; ++i) grad_bias[co] += gp[i];
            for (int ci = 0; ci < x.c; ++ci) {
                const double* xp = x.plane(n, ci);
                double* gxp = grad_x.plane(n, ci);
                const double* kp = &k.v[(static_cast<std::size_t>(co) * x.c + ci) * 4];
                double* gkp = &grad_k.v[(static_cast<std::size_t>(co) * x.c + ci) * 4];
                for (int i = 0; i < oh; ++i) {
                    const double* xr0 = xp + static_cast<std::size_t>(2 * i) * x.w;
                    const double* xr1 = xr0 + x.w;
                    double* gxr0 = gxp + static_cast<std::size_t>(2 * i) * x.w;
                    double* gxr1 = gxr0 + x.w;
                    const double* gr = gp + static_cast<std::size_t>(i) * ow;
                    for (int j = 0; j < ow; ++j) {
                        const double g = gr[j];
                        gkp[0] += g * xr0[2 * j];
                        gkp[1] += g * xr0[2 * j + 1];
                        gkp[2] += g * xr1[2 * j];
                        gkp[3] += g * xr1[2 * j + 1];
                        gxr0[2 * j] += g * kp[0];
                        gxr0[2 * j + 1] += g * kp[1];
                        gxr1[2 * j] += g * kp[2];
                        gxr1[2 * j + 1] += g * kp[3];
                    }
                }
            }
        }
}

Tensor4 tconv2x2s2_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias) {
    require(k.h == 2 && k.w == 2 && k.c == x.c, "tconv2x2s2: kernel/input channel mismatch");
    require(bias.size() == static_cast<std::size_t>(k.n), "tconv2x2s2: bias size mismatch");
    const int oh = x.h * 2, ow = x.w * 2;
    Tensor4 y(x.n, k.n, oh, ow);
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < k.n; ++co) {
            double* yp = y.plane(n, co);
            fill_plane(yp, oh * ow, bias[co]);
            for (int ci = 0; ci < x.c; ++ci) {
                const double* xp = x.plane(n, ci);
                const double* kp = &k.v[(static_cast<std::size_t>(co) * x.c + ci) * 4];
                for (int i = 0; i < x.h; ++i) {
                    const double* xr = xp + static_cast<std::size_t>(i) * x.w;
                    double* yr0 = yp + static_cast<std::size_t>(2 * i) * ow;
                    double* yr1 = yr0 + ow;
                    for (int j = 0; j < x.w; ++j) {
                        const double v = xr[j];
                        yr0[2 * j] += kp[0] * v;
                        yr0[2 * j + 1] += kp[1] * v;
                        yr1[2 * j] += kp[2] * v;
                        yr1[2 * j + 1] += kp[3] * v;
                    }
                }
            }
        }
    return y;
}

void tconv2x2s2_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                         Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias) {
    const int oh = x.h * 2, ow = x.w * 2;
    require(grad_y.n == x.n && grad_y.c == k.n && grad_y.h == oh && grad_y.w == ow,
            "tconv2x2s2 backward: grad shape mismatch");
    grad_x = Tensor4(x.n, x.c, x.h, x.w);
    grad_k = Tensor4(k.n, k.c, 2, 2);
    grad_bias.assign(k.n, 0.0);
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < k.n; ++co) {
            const double* gp = grad_y.plane(n, co);
            for (int i = 0; i < oh * ow; ++i) grad_bias[co] += gp[i];
            for (int ci = 0; ci < x.c; ++ci) {
                const double* xp = x.plane(n, ci);
                double* gxp = grad_x.plane(n, ci);
                const double* kp = &k.v[(static_cast<std::size_t>(co) * x.c + ci) * 4];
                double* gkp = &grad_k.v[(static_cast<std::size_t>(co) * x.c + ci) * 4];
                for (int i = 0; i < x.h; ++i) {
                    const double* gr0 = gp + static_cast<std::size_t>(2 * i) * ow;
                    const double* gr1 = gr0 + ow;
                    const double* xr = xp + static_cast<std::size_t>(i) * x.w;
                    double* gxr = gxp + static_cast<std::size_t>(i) * x.w;
                    for (int j = 0; j < x.w; ++j) {
                        gxr[j] += kp[0] * gr0[2 * j] + kp[1] * gr0[2 * j + 1] +
                                  kp[2] * gr1[2 * j] + kp[3] * gr1[2 * j + 1];
                        gkp[0] += gr0[2 * j] * xr[j];
                        gkp[1] += gr0[2 * j + 1] * xr[j];
                        gkp[2] += gr1[2 * j] * xr[j];
                        gkp[3] += gr1[2 * j + 1] * xr[j];
                    }
                }
            }
        }
}

Tensor4 conv1x1_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias) {
    require(k.h == 1 && k.w == 1 && k.c == x.c, "conv1x1: kernel/input channel mismatch");
    require(bias.size() == static_cast<std::size_t>(k.n), "conv1x1: bias size mismatch");
    Tensor4 y(x.n, k.n, x.h, x.w);
    const int hw = x.h * x.w;
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < k.n; ++co) {
            double* yp = y.plane(n, co);
            fill_plane(yp, hw, bias[co]);
            for (int ci = 0; ci < x.c; ++ci) {
                const double kv = k.v[static_cast<std::size_t>(co) * x.c + ci];
                const double* xp = x.plane(n, ci);
                for (int i = 0; i < hw; ++i) yp[i] += kv * xp[i];
            }
        }
    return y;
}

void conv1x1_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                      Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias) {
    require(grad_y.n == x.n && grad_y.c == k.n && grad_y.h == x.h && grad_y.w == x.w,
            "conv1x1 backward: grad shape mismatch");
    const int hw = x.h * x.w;
    grad_x = Tensor4(x.n, x.c, x.h, x.w);
    grad_k = Tensor4(k.n, k.c, 1, 1);
    grad_bias.assign(k.n, 0.0);
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < k.n; ++co) {
            const double* gp = grad_y.plane(n, co);
            for (int i = 0; i < hw; ++i) grad_bias[co] += gp[i];
            for (int ci = 0; ci < x.c; ++ci) {
                const double kv = k.v[static_cast<std::size_t>(co) * x.c + ci];
                const double* xp = x.plane(n, ci);
                double* gxp = grad_x.plane(n, ci);
                double acc = 0.0;
                for (int i = 0; i < hw; ++i) {
                    acc += gp[i] * xp[i];
                    gxp[i] += kv * gp[i];
                }
                grad_k.v[static_cast<std::size_t>(co) * x.c + ci] += acc;
            }
        }
}

Tensor4 instance_norm_forward(const Tensor4& x, const std::vector<double>& gamma,
                              const std::vector<double>& beta, double epsilon,
                              InstanceNormCache& cache) {
    require(gamma.size() == static_cast<std::size_t>(x.c) && beta.size() == gamma.size(),
            "instance_norm: affine parameter size mismatch");
    const int hw = x.h * x.w;
    Tensor4 y(x.n, x.c, x.h, x.w);
    cache.xhat = Tensor4(x.n, x.c, x.h, x.w);
    cache.inv_std.assign(static_cast<std::size_t>(x.n) * x.c, 0.0);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const double* xp = x.plane(n, c);
            double mean = 0.0;
            for (int i = 0; i < hw; ++i) mean += xp[i];
            mean /= hw;
            double var = 0.0;
            for (int i = 0; i < hw; ++i) {
                const double d = xp[i] - mean;
                var += d * d;
            }
            var /= hw;
            const double inv_std = 1.0 / std::sqrt(var + epsilon);
            cache.inv_std[static_cast<std::size_t>(n) * x.c + c] = inv_std;
            double* xh = cache.xhat.plane(n, c);
            double* yp = y.plane(n, c);
            const double g = gamma[c], b = beta[c];
            for (int i = 0; i < hw; ++i) {
                xh[i] = (xp[i] - mean) * inv_std;
                yp[i] = g * xh[i] + b;
            }
        }
    return y;
}

void instance_norm_backward(const InstanceNormCache& cache, const std::vector<double>& gamma,
                            const Tensor4& grad_y, Tensor4& grad_x,
                            std::vector<double>& grad_gamma, std::vector<double>& grad_beta) {
    const Tensor4& xhat = cache.xhat;
    require_same_shape(xhat, grad_y, "instance_norm backward");
    const int hw = xhat.h * xhat.w;
    grad_x = Tensor4(xhat.n, xhat.c, xhat.h, xhat.w);
    grad_gamma.assign(xhat.c, 0.0);
    grad_beta.assign(xhat.c, 0.0);
    for (int n = 0; n < xhat.n; ++n)
        for (int c = 0; c < xhat.c; ++c) {
            const double* gy = grad_y.plane(n, c);
            const double* xh = xhat.plane(n, c);
            double* gx = grad_x.plane(n, c);
            const double inv_std = cache.inv_std[static_cast<std::size_t>(n) * xhat.c + c];
            double sum_gy = 0.0, sum_gyxh = 0.0;
            for (int i = 0; i < hw; ++i) {
                sum_gy += gy[i];
                sum_gyxh += gy[i] * xh[i];
            }
            grad_beta[c] += sum_gy;
            grad_gamma[c] += sum_gyxh;
            const double g = gamma[c];
            const double m1 = sum_gy / hw;
            const double m2 = sum_gyxh / hw;
            for (int i = 0; i < hw; ++i)
                gx[i] = g * inv_std * (gy[i] - m1 - xh[i] * m2);
        }
}

Tensor4 leaky_relu_forward(const Tensor4& x, double negative_slope) {
    Tensor4 y = x;
    for (double& v : y.v)
        if (v <= 0.0) v *= negative_slope;
    return y;
}

Tensor4 leaky_relu_backward(const Tensor4& y, double negative_slope, const Tensor4& grad_y) {
    require_same_shape(y, grad_y, "leaky_relu backward");
    Tensor4 gx = grad_y;
    for (std::size_t i = 0; i < y.v.size(); ++i)
        if (y.v[i] <= 0.0) gx.v[i] *= negative_slope;
    return gx;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    require(a.n == b.n && a.h == b.h && a.w == b.w, "concat: spatial/batch mismatch");
    Tensor4 y(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int n = 0; n < a.n; ++n) {
        std::memcpy(y.plane(n, 0), a.plane(n, 0), a.c * plane * sizeof(double));
        std::memcpy(y.plane(n, a.c), b.plane(n, 0), b.c * plane * sizeof(double));
    }
    return y;
}

void split_channels(const Tensor4& grad_cat, Tensor4& grad_a, Tensor4& grad_b) {
    require(grad_a.n == grad_cat.n && grad_b.n == grad_cat.n &&
                grad_a.c + grad_b.c == grad_cat.c && grad_a.h == grad_cat.h &&
                grad_b.h == grad_cat.h && grad_a.w == grad_cat.w && grad_b.w == grad_cat.w,
            "split: shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(grad_cat.h) * grad_cat.w;
    for (int n = 0; n < grad_cat.n; ++n) {
        std::memcpy(grad_a.plane(n, 0), grad_cat.plane(n, 0), grad_a.c * plane * sizeof(double));
        std::memcpy(grad_b.plane(n, 0), grad_cat.plane(n, grad_a.c), grad_b.c * plane * sizeof(double));
    }
}

}  // namespace demseg::layers
