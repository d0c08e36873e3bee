#include "demseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace demseg {

namespace {

// Interpolation pole of the cubic B-spline and the matching prefilter gain.
constexpr double kPole = -0.26794919243112270647;  // sqrt(3) - 2
constexpr double kGain = 6.0;                      // (1 - z)(1 - 1/z)

// Replicated-edge padding long enough for the prefilter transient (|z|^32
// ~ 1e-18) and for evaluation slightly beyond the grid.
constexpr int kPad = 32;

// In-place cubic B-spline prefilter, replicate boundary assumed already
// baked into the padded signal.
void prefilter(double* c, int n) {
    for (int i = 0; i < n; ++i) c[i] *= kGain;
    c[0] /= 1.0 - kPole;  // fixed point of the causal filter on a constant
    for (int i = 1; i < n; ++i) c[i] += kPole * c[i - 1];
    c[n - 1] *= kPole / (kPole - 1.0);
    for (int i = n - 2; i >= 0; --i) c[i] = kPole * (c[i + 1] - c[i]);
}

void bspline_weights(double t, double w[4]) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
    w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
    w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
    w[3] = t3 / 6.0;
}

// Source coordinate of target sample k under center-aligned resampling.
double source_coord(int k, double ratio) { return (k + 0.5) * ratio - 0.5; }

int nearest_index(double coord, int size) {
    const int i = static_cast<int>(std::floor(coord + 0.5));
    return std::clamp(i, 0, size - 1);
}

// Prefiltered coefficients of one slice with kPad replicated samples on
// every side; index (y + kPad, x + kPad).
std::vector<double> slice_coefficients(const Volume& image, int z) {
    const int h = image.shape.y;
    const int w = image.shape.x;
    const int hp = h + 2 * kPad;
    const int wp = w + 2 * kPad;

    std::vector<double> grid(static_cast<std::size_t>(hp) * wp);
    std::vector<double> line(std::max(hp, wp));

    // rows along X
    for (int y = 0; y < h; ++y) {
        const float* src = image.data.data() + image.index(z, y, 0);
        for (int x = 0; x < wp; ++x)
            line[x] = src[std::clamp(x - kPad, 0, w - 1)];
        prefilter(line.data(), wp);
        std::copy(line.begin(), line.begin() + wp,
                  grid.begin() + static_cast<std::size_t>(y + kPad) * wp);
    }
    // replicate row coefficients, then columns along Y
    for (int x = 0; x < wp; ++x) {
        for (int y = 0; y < hp; ++y)
            line[y] = grid[static_cast<std::size_t>(std::clamp(y - kPad, 0, h - 1) + kPad) * wp + x];
        prefilter(line.data(), hp);
        for (int y = 0; y < hp; ++y)
            grid[static_cast<std::size_t>(y) * wp + x] = line[y];
    }
    return grid;
}

}  // namespace

int resampled_axis_size(int old_size, double old_spacing, double new_spacing) {
    const long long n = std::llround(old_size * old_spacing / new_spacing);
    return static_cast<int>(std::max(1LL, n));
}

Volume zscore(const Volume& image, double epsilon) {
    validate(image);
    if (epsilon <= 0.0)
        throw std::invalid_argument("zscore: epsilon must be positive");
    double mean = 0.0;
    for (float v : image.data) mean += v;
    mean /= static_cast<double>(image.data.size());
    double var = 0.0;
    for (float v : image.data) {
        const double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(image.data.size());
    const double denom = std::max(std::sqrt(var), epsilon);

    Volume out;
    out.shape = image.shape;
    out.spacing = image.spacing;
    out.data.resize(image.data.size());
    for (std::size_t i = 0; i < image.data.size(); ++i)
        out.data[i] = static_cast<float>((image.data[i] - mean) / denom);
    return out;
}

Volume resample_image(const Volume& image, const Spacing& target) {
    validate(image);
    if (!target.valid())
        throw std::invalid_argument("resample_image: invalid target spacing");
    if (target == image.spacing)
        return image;  // exact identity

    const Shape3 in = image.shape;
    Volume out;
    out.spacing = target;
    out.shape = Shape3{resampled_axis_size(in.z, image.spacing.dz, target.dz),
                       resampled_axis_size(in.y, image.spacing.dy, target.dy),
                       resampled_axis_size(in.x, image.spacing.dx, target.dx)};
    out.data.resize(out.shape.count());

    const double rz = target.dz / image.spacing.dz;
    const double ry = target.dy / image.spacing.dy;
    const double rx = target.dx / image.spacing.dx;
    const int wp = in.x + 2 * kPad;

    // per-column interpolation setup, shared across slices
    std::vector<int> x_base(out.shape.x);
    std::vector<double> x_w(static_cast<std::size_t>(out.shape.x) * 4);
    for (int xo = 0; xo < out.shape.x; ++xo) {
        const double c = source_coord(xo, rx);
        const int i = static_cast<int>(std::floor(c));
        x_base[xo] = i - 1 + kPad;
        bspline_weights(c - i, &x_w[static_cast<std::size_t>(xo) * 4]);
    }
    std::vector<int> y_base(out.shape.y);
    std::vector<double> y_w(static_cast<std::size_t>(out.shape.y) * 4);
    for (int yo = 0; yo < out.shape.y; ++yo) {
        const double c = source_coord(yo, ry);
        const int i = static_cast<int>(std::floor(c));
        y_base[yo] = i - 1 + kPad;
        bspline_weights(c - i, &y_w[static_cast<std::size_t>(yo) * 4]);
    }

    std::vector<double> coeff;
    int cached_z = -1;
    for (int zo = 0; zo < out.shape.z; ++zo) {
        const int zs = nearest_index(source_coord(zo, rz), in.z);
        if (zs != cached_z) {
            coeff = slice_coefficients(image, zs);
            cached_z = zs;
        }
        for (int yo = 0; yo < out.shape.y; ++yo) {
            const double* wy = &y_w[static_cast<std::size_t>(yo) * 4];
            const double* rows[4];
            for (int m = 0; m < 4; ++m)
                rows[m] = coeff.data() + static_cast<std::size_t>(y_base[yo] + m) * wp;
            float* dst = out.data.data() + out.index(zo, yo, 0);
            for (int xo = 0; xo < out.shape.x; ++xo) {
                const double* wx = &x_w[static_cast<std::size_t>(xo) * 4];
                const int xb = x_base[xo];
                double acc = 0.0;
                for (int m = 0; m < 4; ++m) {
                    const double* r = rows[m] + xb;
                    acc += wy[m] * (wx[0] * r[0] + wx[1] * r[1] + wx[2] * r[2] + wx[3] * r[3]);
                }
                dst[xo] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

LabelMap resample_label_to_grid(const LabelMap& labels, const Spacing& target,
                                const Shape3& target_shape) {
    validate(labels);
    if (!target.valid())
        throw std::invalid_argument("resample_label: invalid target spacing");
    if (target_shape.z <= 0 || target_shape.y <= 0 || target_shape.x <= 0)
        throw std::invalid_argument("resample_label: non-positive target shape");
    if (target == labels.spacing && target_shape == labels.shape)
        return labels;

    const Shape3 in = labels.shape;
    LabelMap out;
    out.shape = target_shape;
    out.spacing = target;
    out.data.resize(out.shape.count());

    const double rz = target.dz / labels.spacing.dz;
    const double ry = target.dy / labels.spacing.dy;
    const double rx = target.dx / labels.spacing.dx;

    for (int zo = 0; zo < out.shape.z; ++zo) {
        const int zs = nearest_index(source_coord(zo, rz), in.z);
        for (int yo = 0; yo < out.shape.y; ++yo) {
            const double yc = source_coord(yo, ry);
            const int yi = static_cast<int>(std::floor(yc));
            const double fy = yc - yi;
            const int y0 = std::clamp(yi, 0, in.y - 1);
            const int y1 = std::clamp(yi + 1, 0, in.y - 1);
            for (int xo = 0; xo < out.shape.x; ++xo) {
                const double xc = source_coord(xo, rx);
                const int xi = static_cast<int>(std::floor(xc));
                const double fx = xc - xi;
                const int x0 = std::clamp(xi, 0, in.x - 1);
                const int x1 = std::clamp(xi + 1, 0, in.x - 1);

                // linear interpolation of the one-hot channels, accumulated
                // per corner label
                double score[kNumLabels] = {0, 0, 0, 0, 0};
                score[labels.at(zs, y0, x0)] += (1.0 - fy) * (1.0 - fx);
                score[labels.at(zs, y0, x1)] += (1.0 - fy) * fx;
                score[labels.at(zs, y1, x0)] += fy * (1.0 - fx);
                score[labels.at(zs, y1, x1)] += fy * fx;

                int best = 0;
                for (int c = 1; c < kNumLabels; ++c)
                    if (score[c] > score[best]) best = c;  // ties keep smallest
                out.at(zo, yo, xo) = static_cast<std::uint8_t>(best);
            }
        }
    }
    return out;
}

LabelMap resample_label(const LabelMap& labels, const Spacing& target) {
    validate(labels);
    if (!target.valid())
        throw std::invalid_argument("resample_label: invalid target spacing");
    const Shape3 shape{resampled_axis_size(labels.shape.z, labels.spacing.dz, target.dz),
                       resampled_axis_size(labels.shape.y, labels.spacing.dy, target.dy),
                       resampled_axis_size(labels.shape.x, labels.spacing.dx, target.dx)};
    return resample_label_to_grid(labels, target, shape);
}

}  // namespace demseg
