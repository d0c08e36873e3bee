#pragma once

#include "demseg/volume.hpp"

namespace demseg {

struct PreprocessConfig {
    Spacing target_spacing{10.0, 1.458, 1.458};
    double zscore_epsilon = 1e-8;

    bool valid() const { return target_spacing.valid() && zscore_epsilon > 0.0; }
};

// Output size of a resampled axis: round(old_size * old_spacing / new_spacing),
// at least 1.
int resampled_axis_size(int old_size, double old_spacing, double new_spacing);

// (x - mean) / max(std, epsilon) over all voxels, population std.
// Constant images map to all zeros.
Volume zscore(const Volume& image, double epsilon = 1e-8);

// Cubic (order-3) B-spline interpolation in-plane (Y, X), nearest neighbor
// through-plane (Z). Voxel centers sit at (i + 0.5) * spacing, so target
// sample k maps to source coordinate (k + 0.5) * new/old - 0.5. Borders are
// clamped (replicate). Resampling to the source spacing is the exact identity.
Volume resample_image(const Volume& image, const Spacing& target);

// One-hot encode the 5 classes, interpolate each channel (linear in-plane,
// nearest through-plane), then per-voxel argmax with ties broken toward the
// smallest label index.
LabelMap resample_label(const LabelMap& labels, const Spacing& target);

// Same interpolation rule but with the output grid forced to `target_shape`
// (used to map predictions back onto the original image grid).
LabelMap resample_label_to_grid(const LabelMap& labels, const Spacing& target,
                                const Shape3& target_shape);

}  // namespace demseg
