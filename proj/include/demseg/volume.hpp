#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace demseg {

// Label scheme used throughout: 0 background, 1 LV cavity, 2 healthy
// myocardium, 3 infarction, 4 no-reflow.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kCavity = 1;
inline constexpr std::uint8_t kMyocardium = 2;
inline constexpr std::uint8_t kInfarction = 3;
inline constexpr std::uint8_t kNoReflow = 4;
inline constexpr int kNumLabels = 5;

// Millimeters per voxel along the (slice, row, column) axes. The slice
// axis carries the short-axis stack direction.
struct Spacing {
    double dz = 1.0;
    double dy = 1.0;
    double dx = 1.0;

    bool valid() const {
        return std::isfinite(dz) && std::isfinite(dy) && std::isfinite(dx) &&
               dz > 0.0 && dy > 0.0 && dx > 0.0;
    }
    bool operator==(const Spacing&) const = default;
};

// Grid extents as (Z, Y, X) voxel counts, Z outermost in memory.
struct Shape3 {
    int z = 0;
    int y = 0;
    int x = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(z) * static_cast<std::size_t>(y) *
               static_cast<std::size_t>(x);
    }
    bool operator==(const Shape3&) const = default;
};

struct Volume {
    Shape3 shape;
    Spacing spacing;
    std::vector<float> data;  // row-major, Z outermost

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * shape.y + y) * shape.x + x;
    }
    float& at(int z, int y, int x) { return data[index(z, y, x)]; }
    float at(int z, int y, int x) const { return data[index(z, y, x)]; }
};

struct LabelMap {
    Shape3 shape;
    Spacing spacing;
    std::vector<std::uint8_t> data;

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * shape.y + y) * shape.x + x;
    }
    std::uint8_t& at(int z, int y, int x) { return data[index(z, y, x)]; }
    std::uint8_t at(int z, int y, int x) const { return data[index(z, y, x)]; }
};

// Per-class probability grid, C outermost then (Z, Y, X).
struct ProbMap {
    int num_classes = 0;
    Shape3 shape;
    Spacing spacing;
    std::vector<double> data;

    std::size_t index(int c, int z, int y, int x) const {
        return ((static_cast<std::size_t>(c) * shape.z + z) * shape.y + y) *
                   shape.x + x;
    }
    double& at(int c, int z, int y, int x) { return data[index(c, z, y, x)]; }
    double at(int c, int z, int y, int x) const { return data[index(c, z, y, x)]; }
};

// Inclusive voxel index bounds per axis.
struct BBox {
    int z0 = 0, z1 = 0;
    int y0 = 0, y1 = 0;
    int x0 = 0, x1 = 0;

    int depth() const { return z1 - z0 + 1; }
    int height() const { return y1 - y0 + 1; }
    int width() const { return x1 - x0 + 1; }

    bool well_formed() const { return z0 <= z1 && y0 <= y1 && x0 <= x1; }
    bool within(const Shape3& s) const {
        return well_formed() && z0 >= 0 && y0 >= 0 && x0 >= 0 &&
               z1 < s.z && y1 < s.y && x1 < s.x;
    }
    bool operator==(const BBox&) const = default;
};

inline BBox full_box(const Shape3& s) {
    return BBox{0, s.z - 1, 0, s.y - 1, 0, s.x - 1};
}

double voxel_volume(const Spacing& spacing);

void validate(const Volume& v);
void validate(const LabelMap& m);
void validate(const ProbMap& p);

// Binary mask over a label map: foreground iff the voxel label is in
// `selected`. Selected labels must lie in {0..4}.
LabelMap label_mask(const LabelMap& labels, std::initializer_list<int> selected);
LabelMap label_mask(const LabelMap& labels, const std::vector<int>& selected);

std::size_t count_labels(const LabelMap& labels, std::initializer_list<int> selected);

}  // namespace demseg
