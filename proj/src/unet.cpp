#include "demseg/unet.hpp"

#include <algorithm>
#include <cmath>

#include "demseg/rng.hpp"

namespace demseg {

using namespace layers;

namespace {

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
    auto conv = [&](const std::string& name, auto& cp) {
        fn(name + ".w", cp.w.v, std::vector<int>{cp.w.n, cp.w.c, cp.w.h, cp.w.w});
        fn(name + ".b", cp.b, std::vector<int>{static_cast<int>(cp.b.size())});
    };
    auto norm = [&](const std::string& name, auto& np) {
        fn(name + ".gamma", np.gamma, std::vector<int>{static_cast<int>(np.gamma.size())});
        fn(name + ".beta", np.beta, std::vector<int>{static_cast<int>(np.beta.size())});
    };
    auto block = [&](const std::string& name, auto& bp) {
        conv(name + ".conv1", bp.conv1);
        norm(name + ".norm1", bp.norm1);
        conv(name + ".conv2", bp.conv2);
        norm(name + ".norm2", bp.norm2);
    };
    for (std::size_t l = 0; l < p.enc.size(); ++l) block("enc" + std::to_string(l), p.enc[l]);
    for (std::size_t l = 0; l < p.down.size(); ++l) conv("down" + std::to_string(l), p.down[l]);
    for (std::size_t l = 0; l < p.up.size(); ++l) conv("up" + std::to_string(l), p.up[l]);
    for (std::size_t l = 0; l < p.dec.size(); ++l) block("dec" + std::to_string(l), p.dec[l]);
    conv("head", p.head);
}

ConvParams make_conv(int c_out, int c_in, int k) {
    ConvParams p;
    p.w = Tensor4(c_out, c_in, k, k);
    p.b.assign(c_out, 0.0);
    return p;
}

NormParams make_norm(int channels) {
    NormParams p;
    p.gamma.assign(channels, 0.0);
    p.beta.assign(channels, 0.0);
    return p;
}

BlockParams make_block(int c_in, int c_out) {
    BlockParams b;
    b.conv1 = make_conv(c_out, c_in, 3);
    b.norm1 = make_norm(c_out);
    b.conv2 = make_conv(c_out, c_out, 3);
    b.norm2 = make_norm(c_out);
    return b;
}

// conv -> instance norm -> leaky ReLU, twice
Tensor4 block_forward(const BlockParams& p, const UNetConfig& cfg, const Tensor4& x,
                      BlockCache& cache) {
    cache.in = x;
    Tensor4 t = conv3x3_forward(x, p.conv1.w, p.conv1.b);
    t = instance_norm_forward(t, p.norm1.gamma, p.norm1.beta, cfg.norm_epsilon, cache.n1);
    cache.a1 = leaky_relu_forward(t, cfg.negative_slope);
    t = conv3x3_forward(cache.a1, p.conv2.w, p.conv2.b);
    t = instance_norm_forward(t, p.norm2.gamma, p.norm2.beta, cfg.norm_epsilon, cache.n2);
    cache.out = leaky_relu_forward(t, cfg.negative_slope);
    return cache.out;
}

Tensor4 block_backward(const BlockParams& p, const UNetConfig& cfg, const BlockCache& cache,
                       const Tensor4& grad_out, BlockParams& grads) {
    Tensor4 g = leaky_relu_backward(cache.out, cfg.negative_slope, grad_out);
    Tensor4 g_conv2;
    instance_norm_backward(cache.n2, p.norm2.gamma, g, g_conv2, grads.norm2.gamma,
                           grads.norm2.beta);
    Tensor4 g_a1;
    conv3x3_backward(cache.a1, p.conv2.w, g_conv2, g_a1, grads.conv2.w, grads.conv2.b);
    g = leaky_relu_backward(cache.a1, cfg.negative_slope, g_a1);
    Tensor4 g_conv1;
    instance_norm_backward(cache.n1, p.norm1.gamma, g, g_conv1, grads.norm1.gamma,
                           grads.norm1.beta);
    Tensor4 g_in;
    conv3x3_backward(cache.in, p.conv1.w, g_conv1, g_in, grads.conv1.w, grads.conv1.b);
    return g_in;
}

void add_into(Tensor4& acc, const Tensor4& t) {
    require_same_shape(acc, t, "gradient accumulation");
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += t.v[i];
}

}  // namespace

void UNetParams::for_each_array(
    const std::function<void(const std::string&, std::vector<double>&,
                             const std::vector<int>&)>& fn) {
    visit_params(*this, fn);
}

void UNetParams::for_each_array(
    const std::function<void(const std::string&, const std::vector<double>&,
                             const std::vector<int>&)>& fn) const {
    visit_params(*this, fn);
}

UNetParams zero_params(const UNetConfig& config) {
    if (!config.valid())
        throw std::invalid_argument("UNetConfig: invalid configuration");
    UNetParams p;
    p.config = config;
    p.enc.reserve(config.depth);
    for (int l = 0; l < config.depth; ++l) {
        const int c_in = (l == 0) ? config.in_channels : config.channels_at(l);
        p.enc.push_back(make_block(c_in, config.channels_at(l)));
    }
    for (int l = 0; l + 1 < config.depth; ++l) {
        p.down.push_back(make_conv(config.channels_at(l + 1), config.channels_at(l), 2));
        p.up.push_back(make_conv(config.channels_at(l), config.channels_at(l + 1), 2));
        p.dec.push_back(make_block(2 * config.channels_at(l), config.channels_at(l)));
    }
    p.head = make_conv(config.num_classes, config.channels_at(0), 1);
    return p;
}

UNetParams init_params(const UNetConfig& config, std::uint64_t seed) {
    UNetParams p = zero_params(config);
    Rng rng(seed);
    p.for_each_array([&](const std::string& name, std::vector<double>& data,
                         const std::vector<int>& shape) {
        if (shape.size() == 4) {
            const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
            const double sigma = std::sqrt(2.0 / fan_in);
            for (double& v : data) v = rng.normal(0.0, sigma);
        } else if (name.ends_with(".gamma")) {
            std::fill(data.begin(), data.end(), 1.0);
        }  // biases and shifts stay zero
    });
    return p;
}

Tensor4 unet_forward(const UNetParams& params, const Tensor4& input, UNetCache& cache) {
    const UNetConfig& cfg = params.config;
    if (input.c != cfg.in_channels)
        throw std::invalid_argument("unet_forward: input channel count mismatch");
    const int m = cfg.grid_multiple();
    if (input.h % m != 0 || input.w % m != 0)
        throw std::invalid_argument("unet_forward: H and W must be divisible by 2^(depth-1)");

    cache.input = input;
    cache.enc.assign(cfg.depth, BlockCache{});
    cache.dec.assign(cfg.depth - 1, BlockCache{});

    Tensor4 t = block_forward(params.enc[0], cfg, input, cache.enc[0]);
    for (int l = 1; l < cfg.depth; ++l) {
        t = conv2x2s2_forward(cache.enc[l - 1].out, params.down[l - 1].w, params.down[l - 1].b);
        t = block_forward(params.enc[l], cfg, t, cache.enc[l]);
    }
    for (int l = cfg.depth - 2; l >= 0; --l) {
        Tensor4 u = tconv2x2s2_forward(t, params.up[l].w, params.up[l].b);
        Tensor4 cat = concat_channels(u, cache.enc[l].out);
        t = block_forward(params.dec[l], cfg, cat, cache.dec[l]);
    }
    return conv1x1_forward(cache.dec[0].out, params.head.w, params.head.b);
}

UNetGradients unet_backward(const UNetParams& params, const UNetCache& cache,
                            const Tensor4& grad_logits) {
    const UNetConfig& cfg = params.config;
    if (cache.enc.size() != static_cast<std::size_t>(cfg.depth) ||
        cache.dec.size() != static_cast<std::size_t>(cfg.depth - 1) ||
        cache.dec[0].out.n != grad_logits.n || cache.dec[0].out.h != grad_logits.h ||
        cache.dec[0].out.w != grad_logits.w || grad_logits.c != cfg.num_classes)
        throw std::invalid_argument("unet_backward: cache does not match grad_logits");

    UNetGradients g;
    g.params = zero_params(cfg);

    Tensor4 grad;  // grad w.r.t. dec[0].out
    conv1x1_backward(cache.dec[0].out, params.head.w, grad_logits, grad, g.params.head.w,
                     g.params.head.b);

    // pending gradient at each encoder block output
    std::vector<Tensor4> g_enc(cfg.depth);
    for (int l = 0; l < cfg.depth; ++l) {
        const Tensor4& out = cache.enc[l].out;
        g_enc[l] = Tensor4(out.n, out.c, out.h, out.w);
    }

    // decoder path, reverse of execution order (dec level 0 ran last)
    for (int l = 0; l < cfg.depth - 1; ++l) {
        Tensor4 g_cat = block_backward(params.dec[l], cfg, cache.dec[l], grad, g.params.dec[l]);
        const Tensor4& skip = cache.enc[l].out;
        Tensor4 g_u(skip.n, skip.c, skip.h, skip.w);
        Tensor4 g_skip(skip.n, skip.c, skip.h, skip.w);
        split_channels(g_cat, g_u, g_skip);
        add_into(g_enc[l], g_skip);
        const Tensor4& up_in = (l == cfg.depth - 2) ? cache.enc[cfg.depth - 1].out
                                                    : cache.dec[l + 1].out;
        Tensor4 g_up_in;
        tconv2x2s2_backward(up_in, params.up[l].w, g_u, g_up_in, g.params.up[l].w,
                            g.params.up[l].b);
        grad = std::move(g_up_in);
    }
    add_into(g_enc[cfg.depth - 1], grad);

    // encoder path
    for (int l = cfg.depth - 1; l >= 0; --l) {
        Tensor4 g_in =
            block_backward(params.enc[l], cfg, cache.enc[l], g_enc[l], g.params.enc[l]);
        if (l > 0) {
            Tensor4 g_prev;
            conv2x2s2_backward(cache.enc[l - 1].out, params.down[l - 1].w, g_in, g_prev,
                               g.params.down[l - 1].w, g.params.down[l - 1].b);
            add_into(g_enc[l - 1], g_prev);
        } else {
            g.input = std::move(g_in);
        }
    }
    return g;
}

Tensor4 softmax(const Tensor4& logits) {
    Tensor4 out(logits.n, logits.c, logits.h, logits.w);
    const std::size_t plane = static_cast<std::size_t>(logits.h) * logits.w;
    for (int n = 0; n < logits.n; ++n) {
        const double* in_base = logits.plane(n, 0);
        double* out_base = out.plane(n, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            double m = in_base[i];
            for (int c = 1; c < logits.c; ++c)
                m = std::max(m, in_base[c * plane + i]);
            double sum = 0.0;
            for (int c = 0; c < logits.c; ++c) {
                const double e = std::exp(in_base[c * plane + i] - m);
                out_base[c * plane + i] = e;
                sum += e;
            }
            for (int c = 0; c < logits.c; ++c)
                out_base[c * plane + i] /= sum;
        }
    }
    return out;
}

Tensor4 softmax_backward(const Tensor4& probs, const Tensor4& grad_probs) {
    require_same_shape(probs, grad_probs, "softmax_backward");
    Tensor4 out(probs.n, probs.c, probs.h, probs.w);
    const std::size_t plane = static_cast<std::size_t>(probs.h) * probs.w;
    for (int n = 0; n < probs.n; ++n) {
        const double* p = probs.plane(n, 0);
        const double* g = grad_probs.plane(n, 0);
        double* o = out.plane(n, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            double dot = 0.0;
            for (int c = 0; c < probs.c; ++c)
                dot += g[c * plane + i] * p[c * plane + i];
            for (int c = 0; c < probs.c; ++c)
                o[c * plane + i] = p[c * plane + i] * (g[c * plane + i] - dot);
        }
    }
    return out;
}

Tensor4 pad_to_grid(const Tensor4& input, int depth, PadRecord& record) {
    if (depth < 2)
        throw std::invalid_argument("pad_to_grid: depth must be >= 2");
    const int m = 1 << (depth - 1);
    const int ph = (input.h + m - 1) / m * m;
    const int pw = (input.w + m - 1) / m * m;
    record.orig_h = input.h;
    record.orig_w = input.w;
    record.top = (ph - input.h) / 2;
    record.left = (pw - input.w) / 2;
    if (ph == input.h && pw == input.w)
        return input;
    Tensor4 out(input.n, input.c, ph, pw);
    for (int n = 0; n < input.n; ++n)
        for (int c = 0; c < input.c; ++c)
            for (int i = 0; i < input.h; ++i) {
                const double* src = input.plane(n, c) + static_cast<std::size_t>(i) * input.w;
                double* dst = out.plane(n, c) +
                              static_cast<std::size_t>(i + record.top) * pw + record.left;
                std::copy(src, src + input.w, dst);
            }
    return out;
}

Tensor4 crop_from_grid(const Tensor4& padded, const PadRecord& record) {
    if (record.orig_h == padded.h && record.orig_w == padded.w)
        return padded;
    if (record.top + record.orig_h > padded.h || record.left + record.orig_w > padded.w)
        throw std::invalid_argument("crop_from_grid: record does not fit the padded tensor");
    Tensor4 out(padded.n, padded.c, record.orig_h, record.orig_w);
    for (int n = 0; n < padded.n; ++n)
        for (int c = 0; c < padded.c; ++c)
            for (int i = 0; i < record.orig_h; ++i) {
                const double* src = padded.plane(n, c) +
                                    static_cast<std::size_t>(i + record.top) * padded.w +
                                    record.left;
                double* dst = out.plane(n, c) + static_cast<std::size_t>(i) * record.orig_w;
                std::copy(src, src + record.orig_w, dst);
            }
    return out;
}

}  // namespace demseg
