#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "demseg/dataset.hpp"
#include "demseg/loss.hpp"
#include "demseg/metrics.hpp"
#include "demseg/preprocess.hpp"
#include "demseg/rng.hpp"
#include "demseg/unet.hpp"
#include "demseg/volume.hpp"

namespace demseg {

struct StageConfig {
    int stage = 1;
    int patch_h = 64;
    int patch_w = 64;
    int batch_size = 16;
    // Minibatches per epoch; 0 derives it from the training-slice count.
    // Stage 2 pins a fixed epoch length: its ROI crops hold few slices, and
    // an epoch of ceil(slices/batch) steps is far too short to learn the
    // rare lesion classes.
    int iters_per_epoch = 0;
    // Stage 1 trains 3-class {background, cavity, myocardium} by default; a
    // binary whole-LV stage 1 is available via num_classes = 2. Stage 2 is
    // {background, infarction, no-reflow}.
    int num_classes = 3;
    UNetConfig net;
    TrainHyper hyper;

    bool valid() const;
};

StageConfig default_stage1();
StageConfig default_stage2();

struct RoiSpec {
    BBox box;
    int margin = 0;
    Shape3 source;
};

struct ClassifierRule {
    int min_voxels = 10;  // fewer lesion voxels than this means Normal

    bool valid() const { return min_voxels >= 1; }
};

inline constexpr int kNumFolds = 5;

// Seeded partition into k near-equal folds, stratified by the pathology flag
// when present. Returns the fold index per case, aligned with `cases`.
std::vector<int> make_folds(const std::vector<CaseRecord>& cases, int k, std::uint64_t seed);
void assign_folds(std::vector<CaseRecord>& cases, int k, std::uint64_t seed);

// Whole-LV binary target: foreground iff label is in {1,2,3,4}.
LabelMap stage1_targets(const LabelMap& labels);

// Training target in stage class space. Stage 1, 3-class: 0 background,
// 1 cavity, 2 myocardium (lesions count as myocardium); 2-class: whole LV.
// Stage 2: 0 background, 1 infarction, 2 no-reflow.
LabelMap stage_train_targets(const LabelMap& labels, const StageConfig& stage);

// Tight foreground box dilated by `margin` in-plane and clipped; the Z range
// is exactly the slices containing foreground. Empty prediction falls back to
// the full grid.
RoiSpec compute_roi(const LabelMap& stage1_pred, int margin);

Volume crop(const Volume& grid, const RoiSpec& roi);
LabelMap crop(const LabelMap& grid, const RoiSpec& roi);
void paste_back(Volume& dest, const Volume& sub, const RoiSpec& roi);
void paste_back(LabelMap& dest, const LabelMap& sub, const RoiSpec& roi);

// A preprocessed case with targets already mapped into stage class space.
struct StageCase {
    std::string case_id;
    Volume image;
    LabelMap targets;  // values in [0, num_classes)
    int fold = -1;
};

struct Patch {
    std::vector<double> image;         // patch_h * patch_w
    std::vector<std::uint8_t> target;  // class indices
    bool has_foreground = false;
};

// Seeded patch stream over one case: slices drawn uniformly over Z, in-plane
// windows zero-padded at borders. When the case has foreground, every other
// draw is forced to contain some, so at least half of the patches do.
class PatchSampler {
public:
    PatchSampler(const StageCase& cs, const StageConfig& stage, std::uint64_t seed);
    Patch next();

private:
    const StageCase& case_;
    int patch_h_, patch_w_;
    Rng rng_;
    std::uint64_t draws_ = 0;
    std::vector<int> fg_slices_;
    std::vector<std::vector<std::pair<int, int>>> fg_voxels_;  // per slice (y, x)
};

struct TraceEntry {
    int epoch = 0;
    int iter = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    UNetParams params;
    std::vector<TraceEntry> trace;
};

// Trains on every case whose fold differs from `held_out_fold`. Deterministic
// given the seed; throws on a non-finite loss.
TrainResult train_stage(const std::vector<StageCase>& cases, const StageConfig& stage,
                        int held_out_fold, std::uint64_t seed);

// Per-slice ensemble prediction: pad to the network grid, forward, softmax,
// crop back, then average the members in ascending order.
ProbMap predict_stage(const std::vector<UNetParams>& checkpoints, const Volume& image,
                      const StageConfig& stage);

LabelMap argmax_labels(const ProbMap& probs);

// Merges the stage outputs: stage-1 classes become labels {0,1,2} (or {0,2}
// for a binary stage 1), then stage-2 lesions overwrite ROI voxels that are
// LV foreground in stage 1. Labels 3 and 4 never appear outside the ROI.
LabelMap compose_final(const ProbMap& stage1, const ProbMap& stage2, const RoiSpec& roi);

CaseClass classify(const LabelMap& final_labels, const ClassifierRule& rule);

struct PipelineConfig {
    PreprocessConfig pre;
    StageConfig stage1;
    StageConfig stage2;
    int roi_margin = 5;
    ClassifierRule rule;

    bool valid() const;
};

struct PipelineResult {
    LabelMap labels;  // on the original image grid
    CaseClass classification = CaseClass::Normal;
    RoiSpec roi;      // in preprocessed-grid coordinates
};

PipelineResult run_pipeline(const Volume& image, const std::vector<UNetParams>& stage1_ckpts,
                            const std::vector<UNetParams>& stage2_ckpts,
                            const PipelineConfig& config);

// Preprocesses a raw case and maps its labels into stage class space. Stage-2
// cases are cropped to the ground-truth whole-LV ROI with the given margin.
StageCase make_stage_case(const CaseRecord& rec, const StageConfig& stage,
                          const PreprocessConfig& pre, int roi_margin);

}  // namespace demseg
