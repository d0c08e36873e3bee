#include "demseg/volume.hpp"

#include <algorithm>

namespace demseg {

double voxel_volume(const Spacing& spacing) {
    if (!spacing.valid())
        throw std::invalid_argument("voxel_volume: spacing must be positive and finite");
    return spacing.dz * spacing.dy * spacing.dx;
}

void validate(const Volume& v) {
    if (v.shape.z <= 0 || v.shape.y <= 0 || v.shape.x <= 0)
        throw std::invalid_argument("Volume: non-positive shape");
    if (!v.spacing.valid())
        throw std::invalid_argument("Volume: invalid spacing");
    if (v.data.size() != v.shape.count())
        throw std::invalid_argument("Volume: data length does not match shape");
    for (float f : v.data)
        if (!std::isfinite(f))
            throw std::invalid_argument("Volume: non-finite intensity");
}

void validate(const LabelMap& m) {
    if (m.shape.z <= 0 || m.shape.y <= 0 || m.shape.x <= 0)
        throw std::invalid_argument("LabelMap: non-positive shape");
    if (!m.spacing.valid())
        throw std::invalid_argument("LabelMap: invalid spacing");
    if (m.data.size() != m.shape.count())
        throw std::invalid_argument("LabelMap: data length does not match shape");
    for (std::uint8_t l : m.data)
        if (l >= kNumLabels)
            throw std::invalid_argument("LabelMap: label value " + std::to_string(int(l)) +
                                        " outside {0..4}");
}

void validate(const ProbMap& p) {
    if (p.num_classes <= 0)
        throw std::invalid_argument("ProbMap: non-positive class count");
    if (p.shape.z <= 0 || p.shape.y <= 0 || p.shape.x <= 0)
        throw std::invalid_argument("ProbMap: non-positive shape");
    if (!p.spacing.valid())
        throw std::invalid_argument("ProbMap: invalid spacing");
    if (p.data.size() != p.shape.count() * static_cast<std::size_t>(p.num_classes))
        throw std::invalid_argument("ProbMap: data length does not match shape");
    const std::size_t voxels = p.shape.count();
    for (std::size_t i = 0; i < voxels; ++i) {
        double sum = 0.0;
        for (int c = 0; c < p.num_classes; ++c) {
            const double v = p.data[static_cast<std::size_t>(c) * voxels + i];
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("ProbMap: probability outside [0,1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-5)
            throw std::invalid_argument("ProbMap: per-voxel probabilities do not sum to 1");
    }
}

namespace {

LabelMap mask_impl(const LabelMap& labels, const bool (&pick)[kNumLabels]) {
    LabelMap out;
    out.shape = labels.shape;
    out.spacing = labels.spacing;
    out.data.resize(labels.data.size());
    for (std::size_t i = 0; i < labels.data.size(); ++i)
        out.data[i] = pick[labels.data[i]] ? 1 : 0;
    return out;
}

void fill_pick(bool (&pick)[kNumLabels], const int* first, const int* last) {
    std::fill(std::begin(pick), std::end(pick), false);
    for (const int* it = first; it != last; ++it) {
        if (*it < 0 || *it >= kNumLabels)
            throw std::invalid_argument("label_mask: selected label outside {0..4}");
        pick[*it] = true;
    }
}

}  // namespace

LabelMap label_mask(const LabelMap& labels, std::initializer_list<int> selected) {
    bool pick[kNumLabels];
    fill_pick(pick, selected.begin(), selected.end());
    return mask_impl(labels, pick);
}

LabelMap label_mask(const LabelMap& labels, const std::vector<int>& selected) {
    bool pick[kNumLabels];
    fill_pick(pick, selected.data(), selected.data() + selected.size());
    return mask_impl(labels, pick);
}

std::size_t count_labels(const LabelMap& labels, std::initializer_list<int> selected) {
    bool pick[kNumLabels];
    fill_pick(pick, selected.begin(), selected.end());
    std::size_t n = 0;
    for (std::uint8_t l : labels.data)
        if (pick[l]) ++n;
    return n;
}

}  // namespace demseg
