#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "demseg/volume.hpp"

namespace demseg {

enum class CaseClass { Normal, Pathological };

inline const char* to_string(CaseClass c) {
    return c == CaseClass::Normal ? "normal" : "pathological";
}

// Masks are label maps whose nonzero voxels are foreground.

// 2|A n B| / (|A| + |B|); both empty -> 1, exactly one empty -> 0.
double dice(const LabelMap& pred_mask, const LabelMap& gt_mask);

// Voxel-level TP/(TP+FN) and TN/(TN+FP); empty denominators yield 1.
struct SensSpec {
    double sensitivity = 1.0;
    double specificity = 1.0;
};
SensSpec sensitivity_specificity(const LabelMap& pred_mask, const LabelMap& gt_mask);

// Symmetric Hausdorff distance between foreground voxel-center point sets,
// scaled by the spacing, in mm. Undefined (nullopt) when either set is empty.
std::optional<double> hausdorff_mm(const LabelMap& pred_mask, const LabelMap& gt_mask,
                                   const Spacing& spacing);

struct VolumePair {
    double pred_mm3 = 0.0;
    double gt_mm3 = 0.0;
    double diff_mm3 = 0.0;
};
VolumePair volumes(const LabelMap& pred_mask, const LabelMap& gt_mask, const Spacing& spacing);

// |100*V(lesion_pred)/V(myo_total_gt) - 100*V(lesion_gt)/V(myo_total_gt)|.
// Throws if the myocardium-total mask is empty.
double volume_diff_ratio(const LabelMap& lesion_pred, const LabelMap& lesion_gt,
                         const LabelMap& myo_total_gt, const Spacing& spacing);

double accuracy(const std::vector<CaseClass>& predictions, const std::vector<CaseClass>& truths);

struct TargetMetrics {
    std::string target;
    double dice = 0.0;
    double sensitivity = 1.0;
    double specificity = 1.0;
    std::optional<double> hausdorff_mm;
    double volume_pred_mm3 = 0.0;
    double volume_gt_mm3 = 0.0;
    double volume_diff_mm3 = 0.0;
    std::optional<double> volume_diff_ratio_pct;
};

struct SegReport {
    std::string case_id;
    std::vector<TargetMetrics> targets;

    const TargetMetrics& target(const std::string& name) const;
};

struct EvalOptions {
    // Myocardium target counts the whole wall {2,3,4}; false restricts it to {2}.
    bool myocardium_includes_lesions = true;
};

// Every metric for the five reporting targets: myocardium, infarction,
// no-reflow, whole LV, lesions (infarction + no-reflow).
SegReport evaluate_case(const LabelMap& pred, const LabelMap& gt,
                        const EvalOptions& options = {});

// One CSV row per (case, target); undefined fields are written as
// "undefined". A JSON summary holds mean and std per target and metric.
void write_report_csv(const std::vector<SegReport>& reports, const std::filesystem::path& path);
void write_summary_json(const std::vector<SegReport>& reports, const std::filesystem::path& path);

}  // namespace demseg
