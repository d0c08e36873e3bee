#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace demseg {

// Dense NCHW activation/parameter tensor, 64-bit throughout.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

    std::size_t size() const { return v.size(); }

    std::size_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw;
    }
    double& at(int in, int ic, int ih, int iw) { return v[index(in, ic, ih, iw)]; }
    double at(int in, int ic, int ih, int iw) const { return v[index(in, ic, ih, iw)]; }

    double* plane(int in, int ic) {
        return v.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }
    const double* plane(int in, int ic) const {
        return v.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline void require_same_shape(const Tensor4& a, const Tensor4& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": tensor shape mismatch");
}

}  // namespace demseg
