// Acceptance gate: eight criteria, each printed as a single PASS/FAIL line
// with its measured numbers and pinned tolerance. Exits nonzero if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "demseg/cascade.hpp"
#include "demseg/checkpoint.hpp"
#include "demseg/loss.hpp"
#include "demseg/metrics.hpp"
#include "demseg/miv_io.hpp"
#include "demseg/phantom.hpp"
#include "demseg/preprocess.hpp"
#include "demseg/rng.hpp"
#include "demseg/unet.hpp"
#include "demseg/volume.hpp"

using namespace demseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, pattern);
    std::vsnprintf(buf, sizeof buf, pattern, ap);
    va_end(ap);
    return buf;
}

Tensor4 random_normal(int n, int c, int h, int w, Rng& rng) {
    Tensor4 t(n, c, h, w);
    for (double& v : t.v) v = rng.normal();
    return t;
}

Tensor4 random_onehot(int n, int c, int h, int w, Rng& rng) {
    Tensor4 t(n, c, h, w);
    for (int in = 0; in < n; ++in)
        for (int ih = 0; ih < h; ++ih)
            for (int iw = 0; iw < w; ++iw)
                t.at(in, static_cast<int>(rng.uniform_int(0, c - 1)), ih, iw) = 1.0;
    return t;
}

// ---------------------------------------------------------------- criterion 1

bool criterion1(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(20260823);

    UNetConfig cfg;
    cfg.in_channels = 1;
    cfg.num_classes = 2;
    cfg.depth = 2;
    cfg.base_channels = 2;
    UNetParams params = init_params(cfg, 777);
    const Tensor4 x = random_normal(1, 1, 8, 8, rng);
    const Tensor4 target = random_onehot(1, 2, 8, 8, rng);

    const auto loss_of = [&](const UNetParams& p) {
        UNetCache cache;
        return total_loss(softmax(unet_forward(p, x, cache)), target).loss;
    };

    UNetCache cache;
    const Tensor4 logits = unet_forward(params, x, cache);
    const LossGrad lg = total_loss(softmax(logits), target);
    const UNetGradients grads = unet_backward(params, cache, lg.grad);

    std::vector<std::vector<double>*> param_arrays;
    params.for_each_array([&](const std::string&, std::vector<double>& a,
                              const std::vector<int>&) { param_arrays.push_back(&a); });
    std::vector<const std::vector<double>*> grad_arrays;
    grads.params.for_each_array([&](const std::string&, const std::vector<double>& a,
                                    const std::vector<int>&) { grad_arrays.push_back(&a); });

    const double h = 1e-4;
    double max_rel = 0.0;
    std::size_t n_params = 0;
    for (std::size_t ai = 0; ai < param_arrays.size(); ++ai) {
        std::vector<double>& arr = *param_arrays[ai];
        for (std::size_t i = 0; i < arr.size(); ++i, ++n_params) {
            const double keep = arr[i];
            arr[i] = keep + h;
            const double up = loss_of(params);
            arr[i] = keep - h;
            const double down = loss_of(params);
            arr[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double an = (*grad_arrays[ai])[i];
            const double rel = std::abs(fd - an) / std::max({1e-4, std::abs(fd), std::abs(an)});
            max_rel = std::max(max_rel, rel);
        }
    }

    // loss gradients on 2x2 two-class tensors, absolute error against FD
    Tensor4 probs = softmax(random_normal(1, 2, 2, 2, rng));
    const Tensor4 t2 = random_onehot(1, 2, 2, 2, rng);
    double max_abs_dice = 0.0;
    {
        const LossGrad an = dice_loss(probs, t2);
        const double hd = 1e-6;
        for (std::size_t i = 0; i < probs.v.size(); ++i) {
            const double keep = probs.v[i];
            probs.v[i] = keep + hd;
            const double up = dice_loss(probs, t2).loss;
            probs.v[i] = keep - hd;
            const double down = dice_loss(probs, t2).loss;
            probs.v[i] = keep;
            max_abs_dice = std::max(max_abs_dice,
                                    std::abs((up - down) / (2.0 * hd) - an.grad.v[i]));
        }
    }
    Tensor4 logits2 = random_normal(1, 2, 2, 2, rng);
    double max_abs_ce = 0.0;
    {
        const LossGrad an = cross_entropy(softmax(logits2), t2);
        const double hc = 1e-5;
        for (std::size_t i = 0; i < logits2.v.size(); ++i) {
            const double keep = logits2.v[i];
            logits2.v[i] = keep + hc;
            const double up = cross_entropy(softmax(logits2), t2).loss;
            logits2.v[i] = keep - hc;
            const double down = cross_entropy(softmax(logits2), t2).loss;
            logits2.v[i] = keep;
            max_abs_ce = std::max(max_abs_ce,
                                  std::abs((up - down) / (2.0 * hc) - an.grad.v[i]));
        }
    }

    const double secs = seconds_since(t0);
    detail = fmt("%zu params max rel %.2e (tol 1e-3, FD step 1e-4); dice FD %.2e, "
                 "softmax+CE FD %.2e (tol 1e-6); %.1f s (limit 60)",
                 n_params, max_rel, max_abs_dice, max_abs_ce, secs);
    return max_rel < 1e-3 && max_abs_dice < 1e-6 && max_abs_ce < 1e-6 && secs < 60.0;
}

// ---------------------------------------------------------------- criterion 2

struct FgSet {
    std::vector<std::array<int, 3>> pts;
    std::vector<char> mask;
};

FgSet fg_set(const LabelMap& m, const std::vector<int>& labels) {
    FgSet s;
    s.mask.assign(m.data.size(), 0);
    for (int z = 0; z < m.shape.z; ++z)
        for (int y = 0; y < m.shape.y; ++y)
            for (int x = 0; x < m.shape.x; ++x)
                for (int lab : labels)
                    if (m.at(z, y, x) == lab) {
                        s.mask[m.index(z, y, x)] = 1;
                        s.pts.push_back({z, y, x});
                        break;
                    }
    return s;
}

std::optional<double> bf_hausdorff(const FgSet& a, const FgSet& b, const Spacing& sp) {
    if (a.pts.empty() || b.pts.empty()) return std::nullopt;
    const auto directed = [&](const FgSet& p, const FgSet& q) {
        double worst = 0.0;
        for (const auto& u : p.pts) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& v : q.pts) {
                const double dz = (u[0] - v[0]) * sp.dz;
                const double dy = (u[1] - v[1]) * sp.dy;
                const double dx = (u[2] - v[2]) * sp.dx;
                best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

bool criterion2(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(424242);
    double max_dev = 0.0;
    int mismatches = 0;

    for (int trial = 0; trial < 1000; ++trial) {
        const Shape3 shape{static_cast<int>(rng.uniform_int(1, 2)),
                           static_cast<int>(rng.uniform_int(1, 6)),
                           static_cast<int>(rng.uniform_int(1, 6))};
        const Spacing sp{rng.uniform(0.5, 8.0), rng.uniform(0.5, 8.0), rng.uniform(0.5, 8.0)};
        LabelMap gt{shape, sp, {}};
        gt.data.resize(shape.count());
        LabelMap pred = gt;
        for (auto& v : gt.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
        if (trial % 31 == 0) {
            pred.data = gt.data;  // exact match exercises the zero-distance path
        } else if (trial % 31 == 1) {
            std::fill(pred.data.begin(), pred.data.end(), std::uint8_t{0});
        } else {
            for (auto& v : pred.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
        }

        const SegReport rep = evaluate_case(pred, gt);
        const double vv = voxel_volume(sp);
        const FgSet myo_gt = fg_set(gt, {2, 3, 4});
        const std::vector<std::pair<std::string, std::vector<int>>> targets = {
            {"myocardium", {2, 3, 4}}, {"infarction", {3}},        {"no_reflow", {4}},
            {"whole_lv", {1, 2, 3, 4}}, {"lesions", {3, 4}},
        };

        for (const auto& [name, labels] : targets) {
            const TargetMetrics& t = rep.target(name);
            const FgSet p = fg_set(pred, labels);
            const FgSet g = fg_set(gt, labels);
            std::size_t tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < p.mask.size(); ++i) {
                tp += p.mask[i] && g.mask[i];
                fp += p.mask[i] && !g.mask[i];
                fn += !p.mask[i] && g.mask[i];
            }
            const std::size_t tn = p.mask.size() - tp - fp - fn;

            double want_dice;
            if (p.pts.empty() && g.pts.empty())
                want_dice = 1.0;
            else if (p.pts.empty() || g.pts.empty())
                want_dice = 0.0;
            else
                want_dice = 2.0 * tp / static_cast<double>(p.pts.size() + g.pts.size());
            const double want_sens = (tp + fn) == 0 ? 1.0 : tp / static_cast<double>(tp + fn);
            const double want_spec = (tn + fp) == 0 ? 1.0 : tn / static_cast<double>(tn + fp);
            const std::optional<double> want_hd = bf_hausdorff(p, g, sp);
            const double want_vp = static_cast<double>(p.pts.size()) * vv;
            const double want_vg = static_cast<double>(g.pts.size()) * vv;

            const auto dev = [&](double a, double b) {
                max_dev = std::max(max_dev, std::abs(a - b));
                if (std::abs(a - b) > 1e-9) ++mismatches;
            };
            dev(t.dice, want_dice);
            dev(t.sensitivity, want_sens);
            dev(t.specificity, want_spec);
            dev(t.volume_pred_mm3, want_vp);
            dev(t.volume_gt_mm3, want_vg);
            dev(t.volume_diff_mm3, std::abs(want_vp - want_vg));
            if (want_hd.has_value() != t.hausdorff_mm.has_value())
                ++mismatches;
            else if (want_hd)
                dev(*t.hausdorff_mm, *want_hd);

            const bool lesion_target =
                name == "infarction" || name == "no_reflow" || name == "lesions";
            if (lesion_target && !myo_gt.pts.empty()) {
                const double myo_v = static_cast<double>(myo_gt.pts.size()) * vv;
                const double want_vdr =
                    std::abs(100.0 * want_vp / myo_v - 100.0 * want_vg / myo_v);
                if (!t.volume_diff_ratio_pct)
                    ++mismatches;
                else
                    dev(*t.volume_diff_ratio_pct, want_vdr);
            } else if (t.volume_diff_ratio_pct) {
                ++mismatches;
            }
        }
    }

    const double secs = seconds_since(t0);
    detail = fmt("1000 random pairs, 5 targets: %d field mismatches, max deviation %.2e "
                 "(tol 1e-9); %.1f s (limit 30)",
                 mismatches, max_dev, secs);
    return mismatches == 0 && max_dev <= 1e-9 && secs < 30.0;
}

// ---------------------------------------------------------------- criterion 3

bool criterion3(std::string& detail) {
    Rng rng(333);
    const PreprocessConfig pre;

    int shape_errors = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Shape3 shape{static_cast<int>(rng.uniform_int(1, 6)),
                           static_cast<int>(rng.uniform_int(4, 40)),
                           static_cast<int>(rng.uniform_int(4, 40))};
        const Spacing sp{rng.uniform(0.5, 30.0), rng.uniform(0.5, 6.0), rng.uniform(0.5, 6.0)};
        Volume v{shape, sp, {}};
        v.data.resize(shape.count());
        for (auto& f : v.data) f = static_cast<float>(rng.normal());

        const Volume out = resample_image(v, pre.target_spacing);
        const auto expect = [](int n, double old_sp, double new_sp) {
            return static_cast<int>(std::max<long long>(1, std::llround(n * old_sp / new_sp)));
        };
        const Shape3 want{expect(shape.z, sp.dz, pre.target_spacing.dz),
                          expect(shape.y, sp.dy, pre.target_spacing.dy),
                          expect(shape.x, sp.dx, pre.target_spacing.dx)};
        if (!(out.shape == want) || !(out.spacing == pre.target_spacing)) ++shape_errors;
    }

    Volume ident{{3, 17, 23}, {10.0, 1.458, 1.458}, {}};
    ident.data.resize(ident.shape.count());
    for (auto& f : ident.data) f = static_cast<float>(rng.normal(100.0, 40.0));
    const Volume ident_out = resample_image(ident, ident.spacing);
    const bool identity_exact =
        ident_out.shape == ident.shape && ident_out.data == ident.data;

    const Volume z = zscore(ident, pre.zscore_epsilon);
    double mean = 0.0;
    for (float f : z.data) mean += f;
    mean /= static_cast<double>(z.data.size());
    double var = 0.0;
    for (float f : z.data) var += (f - mean) * (f - mean);
    var /= static_cast<double>(z.data.size());
    const double std_dev = std::sqrt(var);

    int label_violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Shape3 shape{static_cast<int>(rng.uniform_int(1, 3)),
                           static_cast<int>(rng.uniform_int(2, 8)),
                           static_cast<int>(rng.uniform_int(2, 8))};
        LabelMap m{shape, {rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)},
                   {}};
        m.data.resize(shape.count());
        const int top = static_cast<int>(rng.uniform_int(0, 4));
        for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, top));
        bool present[kNumLabels] = {};
        for (auto v : m.data) present[v] = true;

        const LabelMap out = resample_label(
            m, {rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)});
        for (auto v : out.data)
            if (v >= kNumLabels || !present[v]) ++label_violations;
    }

    detail = fmt("50 shape pairs: %d off formula; identity resample %s; zscore mean %.1e "
                 "std-1 %.1e (tol 1e-6); label resample violations %d/1000",
                 shape_errors, identity_exact ? "bit-exact" : "DIFFERS", mean,
                 std_dev - 1.0, label_violations);
    return shape_errors == 0 && identity_exact && std::abs(mean) < 1e-6 &&
           std::abs(std_dev - 1.0) < 1e-6 && label_violations == 0;
}

// ---------------------------------------------------------------- criterion 4

bool criterion4(std::string& detail) {
    const ClassifierRule rule;  // threshold 10
    const auto with_lesions = [](int n) {
        LabelMap m{{1, 8, 8}, {10.0, 1.458, 1.458}, {}};
        m.data.assign(m.shape.count(), kMyocardium);
        for (int i = 0; i < n; ++i)
            m.data[static_cast<std::size_t>(i)] = i % 3 == 0 ? kNoReflow : kInfarction;
        return m;
    };
    const CaseClass c0 = classify(with_lesions(0), rule);
    const CaseClass c9 = classify(with_lesions(9), rule);
    const CaseClass c10 = classify(with_lesions(10), rule);
    detail = fmt("lesion counts 0 -> %s, 9 -> %s, 10 -> %s (threshold 10)", to_string(c0),
                 to_string(c9), to_string(c10));
    return c0 == CaseClass::Normal && c9 == CaseClass::Normal && c10 == CaseClass::Pathological;
}

// ------------------------------------------------------- criteria 5 through 7

struct E2E {
    bool trained = false;
    std::vector<TraceEntry> trace1, trace2;
    UNetParams stage1, stage2;
    std::vector<LabelMap> preds;
    std::vector<RoiSpec> rois;
    std::vector<CaseClass> pred_class, true_class;
    double mean_whole_lv = 0.0, mean_lesions = 0.0, acc = 0.0;
    Volume sample_pre;  // a preprocessed held-out image, for the ensemble check
    PipelineConfig pl;
};

E2E run_e2e() {
    E2E e;
    e.pl.stage1 = default_stage1();
    e.pl.stage2 = default_stage2();

    const PhantomConfig pc;
    std::vector<CaseRecord> cases = generate_dataset(pc, 25, 0.67, 42);
    assign_folds(cases, kNumFolds, 42);

    std::vector<StageCase> sc1, sc2;
    for (const CaseRecord& rec : cases) {
        sc1.push_back(make_stage_case(rec, e.pl.stage1, e.pl.pre, e.pl.roi_margin));
        sc2.push_back(make_stage_case(rec, e.pl.stage2, e.pl.pre, e.pl.roi_margin));
    }
    const TrainResult r1 = train_stage(sc1, e.pl.stage1, 0, mix_seed(42, 100));
    const TrainResult r2 = train_stage(sc2, e.pl.stage2, 0, mix_seed(42, 200));
    e.trace1 = r1.trace;
    e.trace2 = r2.trace;
    e.stage1 = r1.params;
    e.stage2 = r2.params;
    e.trained = true;

    double sum_lv = 0.0, sum_les = 0.0;
    int held = 0;
    for (const CaseRecord& rec : cases) {
        if (rec.fold != 0) continue;
        const PipelineResult res =
            run_pipeline(rec.image, {r1.params}, {r2.params}, e.pl);
        const SegReport rep = evaluate_case(res.labels, *rec.labels);
        sum_lv += rep.target("whole_lv").dice;
        sum_les += rep.target("lesions").dice;
        e.preds.push_back(res.labels);
        e.rois.push_back(res.roi);
        e.pred_class.push_back(res.classification);
        e.true_class.push_back(*rec.pathological ? CaseClass::Pathological
                                                 : CaseClass::Normal);
        if (held == 0)
            e.sample_pre = zscore(resample_image(rec.image, e.pl.pre.target_spacing),
                                  e.pl.pre.zscore_epsilon);
        ++held;
    }
    e.mean_whole_lv = sum_lv / held;
    e.mean_lesions = sum_les / held;
    e.acc = accuracy(e.pred_class, e.true_class);
    return e;
}

bool criterion5(const E2E& e, double secs, std::string& detail) {
    detail = fmt("25 phantoms, fold 0 held out (%zu cases): whole-LV Dice %.4f (>= 0.90), "
                 "lesion Dice %.4f (>= 0.50), accuracy %.2f (>= 0.80); %.0f s",
                 e.preds.size(), e.mean_whole_lv, e.mean_lesions, e.acc, secs);
    return e.trained && e.mean_whole_lv >= 0.90 && e.mean_lesions >= 0.50 && e.acc >= 0.80 &&
           secs < 900.0;
}

bool criterion6(const E2E& a, const E2E& b, std::string& detail) {
    const auto traces_equal = [](const std::vector<TraceEntry>& x,
                                 const std::vector<TraceEntry>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i].epoch != y[i].epoch || x[i].iter != y[i].iter || x[i].lr != y[i].lr ||
                x[i].loss != y[i].loss)
                return false;
        return true;
    };
    const bool traces_ok = traces_equal(a.trace1, b.trace1) && traces_equal(a.trace2, b.trace2);

    bool preds_ok = a.preds.size() == b.preds.size() && a.pred_class == b.pred_class;
    for (std::size_t i = 0; preds_ok && i < a.preds.size(); ++i)
        preds_ok = a.preds[i].data == b.preds[i].data && a.rois[i].box == b.rois[i].box;

    detail = fmt("rerun with identical seeds: loss traces %s (%zu + %zu entries), "
                 "predictions %s",
                 traces_ok ? "bit-identical" : "DIFFER", a.trace1.size(), a.trace2.size(),
                 preds_ok ? "identical" : "DIFFER");
    return traces_ok && preds_ok;
}

bool criterion7(const E2E& e, std::string& detail) {
    const std::vector<UNetParams> five(5, e.stage1);
    const ProbMap p5 = predict_stage(five, e.sample_pre, e.pl.stage1);
    const ProbMap p1 = predict_stage({e.stage1}, e.sample_pre, e.pl.stage1);

    double max_diff = 0.0;
    for (std::size_t i = 0; i < p5.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(p5.data[i] - p1.data[i]));

    double max_sum_err = 0.0;
    for (int z = 0; z < p5.shape.z; ++z)
        for (int y = 0; y < p5.shape.y; ++y)
            for (int x = 0; x < p5.shape.x; ++x) {
                double s = 0.0;
                for (int c = 0; c < p5.num_classes; ++c) s += p5.at(c, z, y, x);
                max_sum_err = std::max(max_sum_err, std::abs(s - 1.0));
            }

    detail = fmt("five-copy ensemble vs single: max prob diff %.2e (tol 1e-7); "
                 "per-voxel sum err %.2e (tol 1e-5)",
                 max_diff, max_sum_err);
    return max_diff < 1e-7 && max_sum_err < 1e-5;
}

// ---------------------------------------------------------------- criterion 8

UNetParams f32_rounded(UNetParams p) {
    p.for_each_array([](const std::string&, std::vector<double>& a, const std::vector<int>&) {
        for (double& v : a) v = static_cast<double>(static_cast<float>(v));
    });
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool criterion8(const E2E& e, std::string& detail) {
    const fs::path dir = fs::temp_directory_path() / "demseg_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    Rng rng(888);
    int roundtrip_errors = 0;
    for (int i = 0; i < 100; ++i) {
        const Shape3 shape{static_cast<int>(rng.uniform_int(1, 3)),
                           static_cast<int>(rng.uniform_int(1, 20)),
                           static_cast<int>(rng.uniform_int(1, 20))};
        const Spacing sp{rng.uniform(0.1, 20.0), rng.uniform(0.1, 20.0),
                         rng.uniform(0.1, 20.0)};
        const fs::path p1 = dir / ("grid_a_" + std::to_string(i) + ".miv");
        const fs::path p2 = dir / ("grid_b_" + std::to_string(i) + ".miv");
        if (i % 2 == 0) {
            Volume v{shape, sp, {}};
            v.data.resize(shape.count());
            for (auto& f : v.data) f = static_cast<float>(rng.normal(0.0, 1e4));
            write_miv(v, p1);
            const Volume back = read_miv_volume(p1);
            write_miv(back, p2);
            if (!(back.shape == v.shape) || !(back.spacing == v.spacing) ||
                back.data != v.data || slurp(p1) != slurp(p2))
                ++roundtrip_errors;
        } else {
            LabelMap m{shape, sp, {}};
            m.data.resize(shape.count());
            for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
            write_miv(m, p1);
            const LabelMap back = read_miv_labels(p1);
            write_miv(back, p2);
            if (!(back.shape == m.shape) || !(back.spacing == m.spacing) ||
                back.data != m.data || slurp(p1) != slurp(p2))
                ++roundtrip_errors;
        }
    }

    // A trained checkpoint reloads to identical behavior. Payloads are 32-bit,
    // so the reference is the model with parameters rounded through float.
    UNetParams trained;
    if (e.trained) {
        trained = e.stage1;
    } else {
        // fallback so this criterion stays meaningful if training failed
        StageConfig st;
        st.stage = 1;
        st.num_classes = 2;
        st.patch_h = st.patch_w = 16;
        st.batch_size = 4;
        st.net = UNetConfig{1, 2, 2, 2};
        st.net.num_classes = 2;
        st.hyper.max_epochs = 3;
        std::vector<StageCase> cs;
        for (int i = 0; i < 4; ++i) {
            StageCase c;
            c.case_id = "sq" + std::to_string(i);
            c.fold = 1;
            c.image = Volume{{2, 24, 24}, {10.0, 1.458, 1.458}, {}};
            c.image.data.assign(c.image.shape.count(), -0.5f);
            c.targets = LabelMap{{2, 24, 24}, {10.0, 1.458, 1.458}, {}};
            c.targets.data.assign(c.targets.shape.count(), 0);
            for (int z = 0; z < 2; ++z)
                for (int y = 8; y < 14; ++y)
                    for (int x = 8; x < 14; ++x) {
                        c.image.at(z, y, x) = 2.0f;
                        c.targets.at(z, y, x) = 1;
                    }
            cs.push_back(std::move(c));
        }
        trained = train_stage(cs, st, 0, 99).params;
    }

    const fs::path ck1 = dir / "trained.ckpt";
    const fs::path ck2 = dir / "trained_resaved.ckpt";
    save_checkpoint(trained, ck1);
    const UNetParams loaded = load_checkpoint(ck1);
    save_checkpoint(loaded, ck2);
    const bool resave_identical = slurp(ck1) == slurp(ck2);
    const UNetParams loaded2 = load_checkpoint(ck2);

    Rng xrng(4242);
    const int side = 4 * trained.config.grid_multiple();
    Tensor4 x(1, trained.config.in_channels, side, side);
    for (double& v : x.v) v = xrng.normal();
    UNetCache cache;
    const Tensor4 ref = unet_forward(f32_rounded(trained), x, cache);
    const Tensor4 l1 = unet_forward(loaded, x, cache);
    const Tensor4 l2 = unet_forward(loaded2, x, cache);
    const bool logits_identical = l1.v == ref.v && l2.v == ref.v;

    detail = fmt("100 MIV round trips: %d errors; checkpoint resave %s; reloaded logits %s "
                 "(vs float-rounded source, bitwise)",
                 roundtrip_errors, resave_identical ? "byte-identical" : "DIFFERS",
                 logits_identical ? "identical" : "DIFFER");
    fs::remove_all(dir);
    return roundtrip_errors == 0 && resave_identical && logits_identical;
}

}  // namespace

int main() {
    struct Verdict {
        int id;
        const char* name;
        bool ok;
        std::string detail;
    };
    std::vector<Verdict> verdicts;
    const auto report = [&](int id, const char* name, bool ok, const std::string& detail) {
        std::printf("[%s] criterion %d %s: %s\n", ok ? "PASS" : "FAIL", id, name,
                    detail.c_str());
        std::fflush(stdout);
        verdicts.push_back({id, name, ok, detail});
    };

    std::string d;
    report(1, "gradient correctness", criterion1(d), d);
    report(2, "metric oracle equivalence", criterion2(d), d);
    report(3, "preprocessing laws", criterion3(d), d);
    report(4, "classification rule boundary", criterion4(d), d);

    auto t0 = Clock::now();
    E2E first = run_e2e();
    report(5, "end-to-end phantom run", criterion5(first, seconds_since(t0), d), d);

    E2E second = run_e2e();
    report(6, "determinism", criterion6(first, second, d), d);
    report(7, "ensemble sanity", criterion7(first, d), d);
    report(8, "format round trip", criterion8(first, d), d);

    int failed = 0;
    for (const Verdict& v : verdicts) failed += !v.ok;
    if (failed == 0)
        std::printf("all 8 acceptance criteria passed\n");
    else
        std::printf("%d of 8 acceptance criteria FAILED\n", failed);
    return failed == 0 ? 0 : 1;
}
