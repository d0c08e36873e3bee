#include "demseg/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace demseg {

namespace {

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

void require_roi(const Shape3& shape, const RoiSpec& roi, const char* who) {
    if (!(roi.source == shape))
        throw std::invalid_argument(std::string(who) + ": roi source shape mismatch");
    if (!roi.box.within(shape))
        throw std::invalid_argument(std::string(who) + ": roi out of bounds");
}

// argmax over classes at one voxel, ties toward the smaller index
int argmax_at(const ProbMap& p, int z, int y, int x) {
    int best = 0;
    double best_v = p.at(0, z, y, x);
    for (int c = 1; c < p.num_classes; ++c) {
        const double v = p.at(c, z, y, x);
        if (v > best_v) {
            best_v = v;
            best = c;
        }
    }
    return best;
}

}  // namespace

bool StageConfig::valid() const {
    if (stage != 1 && stage != 2) return false;
    if (patch_h < 1 || patch_w < 1 || batch_size < 1 || iters_per_epoch < 0) return false;
    if (stage == 1 && num_classes != 2 && num_classes != 3) return false;
    if (stage == 2 && num_classes != 3) return false;
    return net.valid() && net.num_classes == num_classes && net.in_channels == 1 &&
           hyper.valid();
}

StageConfig default_stage1() {
    StageConfig s;
    s.stage = 1;
    s.batch_size = 16;
    s.num_classes = 3;
    s.net.num_classes = 3;
    return s;
}

StageConfig default_stage2() {
    StageConfig s;
    s.stage = 2;
    // The LV crops are about 50x50 here, so a 64x64 patch would cover a whole
    // crop and defeat foreground oversampling; half-size patches restore the
    // patch-inside-crop sampling the second stage relies on. Small batches
    // with a long fixed epoch keep the rare lesion classes from being drowned
    // out, which a background-heavy large batch does within a few epochs.
    s.batch_size = 16;
    s.patch_h = s.patch_w = 32;
    s.iters_per_epoch = 40;
    s.num_classes = 3;
    s.net.num_classes = 3;
    return s;
}

std::vector<int> make_folds(const std::vector<CaseRecord>& cases, int k, std::uint64_t seed) {
    if (k < 1)
        throw std::invalid_argument("make_folds: k must be positive");
    if (cases.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("make_folds: fewer cases than folds");

    // strata: pathological, normal, unflagged; the round-robin counter runs
    // across strata so fold sizes stay near-equal
    std::vector<std::size_t> strata[3];
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& p = cases[i].pathological;
        strata[p ? (*p ? 0 : 1) : 2].push_back(i);
    }
    Rng rng(mix_seed(seed, 0xf01d));
    std::vector<int> folds(cases.size(), 0);
    int counter = 0;
    for (auto& stratum : strata) {
        rng.shuffle(stratum);
        for (std::size_t idx : stratum) folds[idx] = counter++ % k;
    }
    return folds;
}

void assign_folds(std::vector<CaseRecord>& cases, int k, std::uint64_t seed) {
    const std::vector<int> folds = make_folds(cases, k, seed);
    for (std::size_t i = 0; i < cases.size(); ++i) cases[i].fold = folds[i];
}

LabelMap stage1_targets(const LabelMap& labels) {
    return label_mask(labels, {kCavity, kMyocardium, kInfarction, kNoReflow});
}

LabelMap stage_train_targets(const LabelMap& labels, const StageConfig& stage) {
    if (!stage.valid())
        throw std::invalid_argument("stage_train_targets: invalid stage config");
    LabelMap out;
    out.shape = labels.shape;
    out.spacing = labels.spacing;
    out.data.resize(labels.data.size());
    for (std::size_t i = 0; i < labels.data.size(); ++i) {
        const std::uint8_t v = labels.data[i];
        std::uint8_t t = 0;
        if (stage.stage == 1) {
            if (stage.num_classes == 2)
                t = v != kBackground;
            else
                t = v == kBackground ? 0 : (v == kCavity ? 1 : 2);
        } else {
            t = v == kInfarction ? 1 : (v == kNoReflow ? 2 : 0);
        }
        out.data[i] = t;
    }
    return out;
}

RoiSpec compute_roi(const LabelMap& stage1_pred, int margin) {
    if (margin < 0)
        throw std::invalid_argument("compute_roi: negative margin");
    const Shape3& s = stage1_pred.shape;
    RoiSpec roi;
    roi.margin = margin;
    roi.source = s;

    bool any = false;
    BBox b{s.z, -1, s.y, -1, s.x, -1};
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x)
                if (stage1_pred.at(z, y, x) != 0) {
                    any = true;
                    b.z0 = std::min(b.z0, z);
                    b.z1 = std::max(b.z1, z);
                    b.y0 = std::min(b.y0, y);
                    b.y1 = std::max(b.y1, y);
                    b.x0 = std::min(b.x0, x);
                    b.x1 = std::max(b.x1, x);
                }
    if (!any) {
        roi.box = full_box(s);
        return roi;
    }
    b.y0 = clampi(b.y0 - margin, 0, s.y - 1);
    b.y1 = clampi(b.y1 + margin, 0, s.y - 1);
    b.x0 = clampi(b.x0 - margin, 0, s.x - 1);
    b.x1 = clampi(b.x1 + margin, 0, s.x - 1);
    roi.box = b;
    return roi;
}

template <typename G>
static G crop_impl(const G& grid, const RoiSpec& roi) {
    require_roi(grid.shape, roi, "crop");
    G out;
    out.shape = Shape3{roi.box.depth(), roi.box.height(), roi.box.width()};
    out.spacing = grid.spacing;
    out.data.resize(out.shape.count());
    for (int z = 0; z < out.shape.z; ++z)
        for (int y = 0; y < out.shape.y; ++y)
            for (int x = 0; x < out.shape.x; ++x)
                out.at(z, y, x) = grid.at(roi.box.z0 + z, roi.box.y0 + y, roi.box.x0 + x);
    return out;
}

template <typename G>
static void paste_impl(G& dest, const G& sub, const RoiSpec& roi) {
    require_roi(dest.shape, roi, "paste_back");
    if (!(sub.shape == Shape3{roi.box.depth(), roi.box.height(), roi.box.width()}))
        throw std::invalid_argument("paste_back: sub-grid shape does not match the roi");
    for (int z = 0; z < sub.shape.z; ++z)
        for (int y = 0; y < sub.shape.y; ++y)
            for (int x = 0; x < sub.shape.x; ++x)
                dest.at(roi.box.z0 + z, roi.box.y0 + y, roi.box.x0 + x) = sub.at(z, y, x);
}

Volume crop(const Volume& grid, const RoiSpec& roi) { return crop_impl(grid, roi); }
LabelMap crop(const LabelMap& grid, const RoiSpec& roi) { return crop_impl(grid, roi); }
void paste_back(Volume& dest, const Volume& sub, const RoiSpec& roi) {
    paste_impl(dest, sub, roi);
}
void paste_back(LabelMap& dest, const LabelMap& sub, const RoiSpec& roi) {
    paste_impl(dest, sub, roi);
}

PatchSampler::PatchSampler(const StageCase& cs, const StageConfig& stage, std::uint64_t seed)
    : case_(cs),
      patch_h_(stage.patch_h),
      patch_w_(stage.patch_w),
      rng_(mix_seed(seed, 0xa7c4)) {
    if (!(cs.image.shape == cs.targets.shape))
        throw std::invalid_argument("PatchSampler: image/target shape mismatch");
    fg_voxels_.resize(static_cast<std::size_t>(cs.targets.shape.z));
    for (int z = 0; z < cs.targets.shape.z; ++z) {
        auto& list = fg_voxels_[static_cast<std::size_t>(z)];
        for (int y = 0; y < cs.targets.shape.y; ++y)
            for (int x = 0; x < cs.targets.shape.x; ++x)
                if (cs.targets.at(z, y, x) != 0) list.emplace_back(y, x);
        if (!list.empty()) fg_slices_.push_back(z);
    }
}

Patch PatchSampler::next() {
    const Shape3& s = case_.image.shape;
    const int lo_y = std::min(0, s.y - patch_h_), hi_y = std::max(0, s.y - patch_h_);
    const int lo_x = std::min(0, s.x - patch_w_), hi_x = std::max(0, s.x - patch_w_);

    const bool forced = !fg_slices_.empty() && draws_ % 2 == 0;
    ++draws_;
    int z, top, left;
    if (forced) {
        z = fg_slices_[static_cast<std::size_t>(
            rng_.uniform_int(0, static_cast<std::int64_t>(fg_slices_.size()) - 1))];
        const auto& list = fg_voxels_[static_cast<std::size_t>(z)];
        const auto [fy, fx] = list[static_cast<std::size_t>(
            rng_.uniform_int(0, static_cast<std::int64_t>(list.size()) - 1))];
        top = clampi(fy - patch_h_ / 2, lo_y, hi_y);
        left = clampi(fx - patch_w_ / 2, lo_x, hi_x);
    } else {
        z = static_cast<int>(rng_.uniform_int(0, s.z - 1));
        top = static_cast<int>(rng_.uniform_int(lo_y, hi_y));
        left = static_cast<int>(rng_.uniform_int(lo_x, hi_x));
    }

    Patch p;
    p.image.assign(static_cast<std::size_t>(patch_h_) * patch_w_, 0.0);
    p.target.assign(static_cast<std::size_t>(patch_h_) * patch_w_, 0);
    for (int r = 0; r < patch_h_; ++r) {
        const int y = top + r;
        if (y < 0 || y >= s.y) continue;
        for (int c = 0; c < patch_w_; ++c) {
            const int x = left + c;
            if (x < 0 || x >= s.x) continue;
            const std::size_t i = static_cast<std::size_t>(r) * patch_w_ + c;
            p.image[i] = case_.image.at(z, y, x);
            const std::uint8_t t = case_.targets.at(z, y, x);
            p.target[i] = t;
            if (t != 0) p.has_foreground = true;
        }
    }
    return p;
}

TrainResult train_stage(const std::vector<StageCase>& cases, const StageConfig& stage,
                        int held_out_fold, std::uint64_t seed) {
    if (!stage.valid())
        throw std::invalid_argument("train_stage: invalid stage config");
    std::vector<std::size_t> train_idx;
    std::size_t total_slices = 0;
    for (std::size_t i = 0; i < cases.size(); ++i)
        if (cases[i].fold != held_out_fold) {
            train_idx.push_back(i);
            total_slices += static_cast<std::size_t>(cases[i].image.shape.z);
        }
    if (train_idx.empty())
        throw std::invalid_argument("train_stage: no training cases outside the held-out fold");

    std::vector<PatchSampler> samplers;
    samplers.reserve(train_idx.size());
    for (std::size_t j = 0; j < train_idx.size(); ++j)
        samplers.emplace_back(cases[train_idx[j]], stage, mix_seed(seed, 1000 + j));

    UNetParams params = init_params(stage.net, mix_seed(seed, 0x1217));
    UNetParams velocity = zero_params(stage.net);
    Rng pick(mix_seed(seed, 0xba7c));

    const int batch = stage.batch_size;
    const int iters =
        stage.iters_per_epoch > 0
            ? stage.iters_per_epoch
            : std::max<int>(1, static_cast<int>((total_slices + batch - 1) /
                                                static_cast<std::size_t>(batch)));

    // build the batch on the padded grid directly; padded voxels carry zero
    // input and background target
    Tensor4 raw(batch, 1, stage.patch_h, stage.patch_w);
    PadRecord pad;
    Tensor4 probe = pad_to_grid(raw, stage.net.depth, pad);
    const int ph = probe.h, pw = probe.w;
    Tensor4 input(batch, 1, ph, pw);
    Tensor4 target(batch, stage.num_classes, ph, pw);

    TrainResult result;
    result.trace.reserve(static_cast<std::size_t>(stage.hyper.max_epochs) * iters);
    for (int epoch = 0; epoch < stage.hyper.max_epochs; ++epoch) {
        const double lr = poly_lr(epoch, stage.hyper);
        for (int it = 0; it < iters; ++it) {
            std::fill(input.v.begin(), input.v.end(), 0.0);
            std::fill(target.v.begin(), target.v.end(), 0.0);
            for (int b = 0; b < batch; ++b) {
                const std::size_t ci = static_cast<std::size_t>(
                    pick.uniform_int(0, static_cast<std::int64_t>(train_idx.size()) - 1));
                const Patch patch = samplers[ci].next();
                for (int r = 0; r < ph; ++r)
                    for (int c = 0; c < pw; ++c) {
                        const int pr = r - pad.top, pc = c - pad.left;
                        const bool inside = pr >= 0 && pr < stage.patch_h && pc >= 0 &&
                                            pc < stage.patch_w;
                        const std::size_t src =
                            inside ? static_cast<std::size_t>(pr) * stage.patch_w + pc : 0;
                        input.at(b, 0, r, c) = inside ? patch.image[src] : 0.0;
                        const int cls = inside ? patch.target[src] : 0;
                        target.at(b, cls, r, c) = 1.0;
                    }
            }
            UNetCache cache;
            const Tensor4 logits = unet_forward(params, input, cache);
            const Tensor4 probs = softmax(logits);
            const LossGrad lg = total_loss(probs, target, stage.hyper.dice_epsilon);
            if (!std::isfinite(lg.loss))
                throw std::runtime_error("train_stage: non-finite loss at epoch " +
                                         std::to_string(epoch) + " iter " + std::to_string(it));
            const UNetGradients grads = unet_backward(params, cache, lg.grad);
            sgd_step(params, grads.params, velocity, stage.hyper, lr);
            result.trace.push_back(TraceEntry{epoch, it, lr, lg.loss});
        }
    }
    result.params = std::move(params);
    return result;
}

ProbMap predict_stage(const std::vector<UNetParams>& checkpoints, const Volume& image,
                      const StageConfig& stage) {
    if (checkpoints.empty())
        throw std::invalid_argument("predict_stage: no checkpoints");
    for (const UNetParams& ck : checkpoints)
        if (!(ck.config == stage.net))
            throw std::invalid_argument("predict_stage: checkpoint architecture mismatch");

    ProbMap out;
    out.num_classes = stage.num_classes;
    out.shape = image.shape;
    out.spacing = image.spacing;
    out.data.assign(static_cast<std::size_t>(stage.num_classes) * image.shape.count(), 0.0);

    const double inv_n = 1.0 / static_cast<double>(checkpoints.size());
    for (int z = 0; z < image.shape.z; ++z) {
        Tensor4 slice(1, 1, image.shape.y, image.shape.x);
        for (int y = 0; y < image.shape.y; ++y)
            for (int x = 0; x < image.shape.x; ++x)
                slice.at(0, 0, y, x) = image.at(z, y, x);
        PadRecord pad;
        const Tensor4 padded = pad_to_grid(slice, stage.net.depth, pad);
        for (const UNetParams& ck : checkpoints) {
            UNetCache cache;
            const Tensor4 probs = crop_from_grid(softmax(unet_forward(ck, padded, cache)), pad);
            for (int c = 0; c < stage.num_classes; ++c)
                for (int y = 0; y < image.shape.y; ++y)
                    for (int x = 0; x < image.shape.x; ++x)
                        out.at(c, z, y, x) += probs.at(0, c, y, x);
        }
    }
    for (double& v : out.data) v *= inv_n;
    return out;
}

LabelMap argmax_labels(const ProbMap& probs) {
    LabelMap out;
    out.shape = probs.shape;
    out.spacing = probs.spacing;
    out.data.resize(probs.shape.count());
    for (int z = 0; z < probs.shape.z; ++z)
        for (int y = 0; y < probs.shape.y; ++y)
            for (int x = 0; x < probs.shape.x; ++x)
                out.at(z, y, x) = static_cast<std::uint8_t>(argmax_at(probs, z, y, x));
    return out;
}

LabelMap compose_final(const ProbMap& stage1, const ProbMap& stage2, const RoiSpec& roi) {
    require_roi(stage1.shape, roi, "compose_final");
    if (stage1.num_classes != 2 && stage1.num_classes != 3)
        throw std::invalid_argument("compose_final: unexpected stage-1 class count");
    if (stage2.num_classes != 3)
        throw std::invalid_argument("compose_final: stage 2 must be 3-class");
    if (!(stage2.shape == Shape3{roi.box.depth(), roi.box.height(), roi.box.width()}))
        throw std::invalid_argument("compose_final: stage-2 grid does not match the roi");

    LabelMap out;
    out.shape = stage1.shape;
    out.spacing = stage1.spacing;
    out.data.resize(stage1.shape.count());
    for (int z = 0; z < out.shape.z; ++z)
        for (int y = 0; y < out.shape.y; ++y)
            for (int x = 0; x < out.shape.x; ++x) {
                const int s1 = argmax_at(stage1, z, y, x);
                std::uint8_t lab = 0;
                if (s1 != 0)
                    lab = stage1.num_classes == 2 ? kMyocardium
                                                  : (s1 == 1 ? kCavity : kMyocardium);
                out.at(z, y, x) = lab;
            }
    for (int z = roi.box.z0; z <= roi.box.z1; ++z)
        for (int y = roi.box.y0; y <= roi.box.y1; ++y)
            for (int x = roi.box.x0; x <= roi.box.x1; ++x) {
                if (out.at(z, y, x) == kBackground) continue;  // lesions only inside the LV
                const int s2 = argmax_at(stage2, z - roi.box.z0, y - roi.box.y0, x - roi.box.x0);
                if (s2 == 1)
                    out.at(z, y, x) = kInfarction;
                else if (s2 == 2)
                    out.at(z, y, x) = kNoReflow;
            }
    return out;
}

CaseClass classify(const LabelMap& final_labels, const ClassifierRule& rule) {
    if (!rule.valid())
        throw std::invalid_argument("classify: threshold must be at least 1");
    const std::size_t lesions = count_labels(final_labels, {kInfarction, kNoReflow});
    return lesions < static_cast<std::size_t>(rule.min_voxels) ? CaseClass::Normal
                                                               : CaseClass::Pathological;
}

bool PipelineConfig::valid() const {
    return pre.valid() && stage1.valid() && stage2.valid() && stage1.stage == 1 &&
           stage2.stage == 2 && roi_margin >= 0 && rule.valid();
}

PipelineResult run_pipeline(const Volume& image, const std::vector<UNetParams>& stage1_ckpts,
                            const std::vector<UNetParams>& stage2_ckpts,
                            const PipelineConfig& config) {
    if (!config.valid())
        throw std::invalid_argument("run_pipeline: invalid pipeline config");
    const Volume pre = zscore(resample_image(image, config.pre.target_spacing),
                              config.pre.zscore_epsilon);
    const ProbMap p1 = predict_stage(stage1_ckpts, pre, config.stage1);

    LabelMap whole_lv = argmax_labels(p1);
    for (std::uint8_t& v : whole_lv.data) v = v != 0;
    const RoiSpec roi = compute_roi(whole_lv, config.roi_margin);

    const ProbMap p2 = predict_stage(stage2_ckpts, crop(pre, roi), config.stage2);
    const LabelMap final_pre = compose_final(p1, p2, roi);

    PipelineResult result;
    result.labels = resample_label_to_grid(final_pre, image.spacing, image.shape);
    result.classification = classify(result.labels, config.rule);
    result.roi = roi;
    return result;
}

StageCase make_stage_case(const CaseRecord& rec, const StageConfig& stage,
                          const PreprocessConfig& pre, int roi_margin) {
    if (!rec.labels)
        throw std::invalid_argument("make_stage_case: case has no ground truth: " + rec.case_id);
    StageCase cs;
    cs.case_id = rec.case_id;
    cs.fold = rec.fold;
    cs.image = zscore(resample_image(rec.image, pre.target_spacing), pre.zscore_epsilon);
    LabelMap labels = resample_label(*rec.labels, pre.target_spacing);
    if (stage.stage == 2) {
        // stage 2 trains on ground-truth LV crops; at inference the crop comes
        // from the stage-1 prediction instead
        const RoiSpec roi = compute_roi(stage1_targets(labels), roi_margin);
        cs.image = crop(cs.image, roi);
        labels = crop(labels, roi);
    }
    cs.targets = stage_train_targets(labels, stage);
    return cs;
}

}  // namespace demseg
