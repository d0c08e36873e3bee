#include "demseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"

namespace demseg {

namespace {

void require_comparable(const LabelMap& a, const LabelMap& b, const char* who) {
    if (!(a.shape == b.shape))
        throw std::invalid_argument(std::string(who) + ": mask shape mismatch");
}

struct Point {
    double z, y, x;
};

std::vector<Point> foreground_points(const LabelMap& mask, const Spacing& s) {
    std::vector<Point> pts;
    for (int z = 0; z < mask.shape.z; ++z)
        for (int y = 0; y < mask.shape.y; ++y)
            for (int x = 0; x < mask.shape.x; ++x)
                if (mask.at(z, y, x) != 0)
                    pts.push_back(Point{z * s.dz, y * s.dy, x * s.dx});
    return pts;
}

// max over a in A of min over b in B of |a-b|
double directed_hausdorff(const std::vector<Point>& a, const std::vector<Point>& b) {
    double worst = 0.0;
    for (const Point& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const Point& q : b) {
            const double dz = p.z - q.z, dy = p.y - q.y, dx = p.x - q.x;
            const double d2 = dz * dz + dy * dy + dx * dx;
            if (d2 < best) {
                best = d2;
                if (best == 0.0) break;
            }
        }
        if (best > worst) worst = best;
    }
    return std::sqrt(worst);
}

std::size_t count_fg(const LabelMap& m) {
    std::size_t n = 0;
    for (std::uint8_t v : m.data)
        if (v != 0) ++n;
    return n;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
    return v ? fmt(*v) : std::string("undefined");
}

struct Moments {
    int n = 0;
    double sum = 0.0, sum2 = 0.0;
    void add(double v) {
        ++n;
        sum += v;
        sum2 += v * v;
    }
    double mean() const { return n ? sum / n : 0.0; }
    double stddev() const {
        if (n == 0) return 0.0;
        const double m = mean();
        return std::sqrt(std::max(0.0, sum2 / n - m * m));
    }
};

}  // namespace

double dice(const LabelMap& pred_mask, const LabelMap& gt_mask) {
    require_comparable(pred_mask, gt_mask, "dice");
    std::size_t a = 0, b = 0, inter = 0;
    for (std::size_t i = 0; i < pred_mask.data.size(); ++i) {
        const bool p = pred_mask.data[i] != 0;
        const bool g = gt_mask.data[i] != 0;
        a += p;
        b += g;
        inter += p && g;
    }
    if (a == 0 && b == 0) return 1.0;
    if (a == 0 || b == 0) return 0.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

SensSpec sensitivity_specificity(const LabelMap& pred_mask, const LabelMap& gt_mask) {
    require_comparable(pred_mask, gt_mask, "sensitivity_specificity");
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < pred_mask.data.size(); ++i) {
        const bool p = pred_mask.data[i] != 0;
        const bool g = gt_mask.data[i] != 0;
        if (g)
            p ? ++tp : ++fn;
        else
            p ? ++fp : ++tn;
    }
    SensSpec r;
    if (tp + fn > 0) r.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (tn + fp > 0) r.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return r;
}

std::optional<double> hausdorff_mm(const LabelMap& pred_mask, const LabelMap& gt_mask,
                                   const Spacing& spacing) {
    require_comparable(pred_mask, gt_mask, "hausdorff_mm");
    const auto a = foreground_points(pred_mask, spacing);
    const auto b = foreground_points(gt_mask, spacing);
    if (a.empty() || b.empty()) return std::nullopt;
    return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

VolumePair volumes(const LabelMap& pred_mask, const LabelMap& gt_mask, const Spacing& spacing) {
    require_comparable(pred_mask, gt_mask, "volumes");
    const double vv = voxel_volume(spacing);
    VolumePair r;
    r.pred_mm3 = static_cast<double>(count_fg(pred_mask)) * vv;
    r.gt_mm3 = static_cast<double>(count_fg(gt_mask)) * vv;
    r.diff_mm3 = std::abs(r.pred_mm3 - r.gt_mm3);
    return r;
}

double volume_diff_ratio(const LabelMap& lesion_pred, const LabelMap& lesion_gt,
                         const LabelMap& myo_total_gt, const Spacing& spacing) {
    require_comparable(lesion_pred, lesion_gt, "volume_diff_ratio");
    require_comparable(lesion_pred, myo_total_gt, "volume_diff_ratio");
    const double vv = voxel_volume(spacing);
    const double myo = static_cast<double>(count_fg(myo_total_gt)) * vv;
    if (myo == 0.0)
        throw std::invalid_argument("volume_diff_ratio: empty myocardium-total mask");
    const double p = 100.0 * static_cast<double>(count_fg(lesion_pred)) * vv / myo;
    const double g = 100.0 * static_cast<double>(count_fg(lesion_gt)) * vv / myo;
    return std::abs(p - g);
}

double accuracy(const std::vector<CaseClass>& predictions, const std::vector<CaseClass>& truths) {
    if (predictions.size() != truths.size())
        throw std::invalid_argument("accuracy: prediction/truth length mismatch");
    if (predictions.empty())
        throw std::invalid_argument("accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == truths[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

const TargetMetrics& SegReport::target(const std::string& name) const {
    for (const auto& t : targets)
        if (t.target == name) return t;
    throw std::out_of_range("SegReport: unknown target " + name);
}

SegReport evaluate_case(const LabelMap& pred, const LabelMap& gt, const EvalOptions& options) {
    if (!(pred.shape == gt.shape))
        throw std::invalid_argument("evaluate_case: shape mismatch");
    if (!(pred.spacing == gt.spacing))
        throw std::invalid_argument("evaluate_case: spacing mismatch");

    const std::vector<int> myo_labels =
        options.myocardium_includes_lesions ? std::vector<int>{2, 3, 4} : std::vector<int>{2};
    const std::vector<std::pair<std::string, std::vector<int>>> targets = {
        {"myocardium", myo_labels},
        {"infarction", {3}},
        {"no_reflow", {4}},
        {"whole_lv", {1, 2, 3, 4}},
        {"lesions", {3, 4}},
    };
    const LabelMap myo_total_gt = label_mask(gt, {2, 3, 4});
    const bool myo_defined = count_fg(myo_total_gt) > 0;

    SegReport report;
    for (const auto& [name, labels] : targets) {
        const LabelMap pm = label_mask(pred, labels);
        const LabelMap gm = label_mask(gt, labels);
        TargetMetrics t;
        t.target = name;
        t.dice = dice(pm, gm);
        const SensSpec ss = sensitivity_specificity(pm, gm);
        t.sensitivity = ss.sensitivity;
        t.specificity = ss.specificity;
        t.hausdorff_mm = hausdorff_mm(pm, gm, gt.spacing);
        const VolumePair vp = volumes(pm, gm, gt.spacing);
        t.volume_pred_mm3 = vp.pred_mm3;
        t.volume_gt_mm3 = vp.gt_mm3;
        t.volume_diff_mm3 = vp.diff_mm3;
        const bool lesion_target = name == "infarction" || name == "no_reflow" || name == "lesions";
        if (lesion_target && myo_defined)
            t.volume_diff_ratio_pct = volume_diff_ratio(pm, gm, myo_total_gt, gt.spacing);
        report.targets.push_back(std::move(t));
    }
    return report;
}

void write_report_csv(const std::vector<SegReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open report CSV for writing: " + path.string());
    out << "case_id,target,dice,sensitivity,specificity,hausdorff_mm,"
           "volume_pred_mm3,volume_gt_mm3,volume_diff_mm3,volume_diff_ratio_pct\n";
    for (const SegReport& r : reports)
        for (const TargetMetrics& t : r.targets)
            out << r.case_id << ',' << t.target << ',' << fmt(t.dice) << ','
                << fmt(t.sensitivity) << ',' << fmt(t.specificity) << ','
                << fmt_opt(t.hausdorff_mm) << ',' << fmt(t.volume_pred_mm3) << ','
                << fmt(t.volume_gt_mm3) << ',' << fmt(t.volume_diff_mm3) << ','
                << fmt_opt(t.volume_diff_ratio_pct) << '\n';
    if (!out.flush())
        throw std::runtime_error("report CSV write failed: " + path.string());
}

void write_summary_json(const std::vector<SegReport>& reports, const std::filesystem::path& path) {
    // mean +/- std per (target, metric), undefined entries skipped
    std::map<std::string, std::map<std::string, Moments>> agg;
    for (const SegReport& r : reports) {
        for (const TargetMetrics& t : r.targets) {
            auto& m = agg[t.target];
            m["dice"].add(t.dice);
            m["sensitivity"].add(t.sensitivity);
            m["specificity"].add(t.specificity);
            if (t.hausdorff_mm) m["hausdorff_mm"].add(*t.hausdorff_mm);
            m["volume_diff_mm3"].add(t.volume_diff_mm3);
            if (t.volume_diff_ratio_pct) m["volume_diff_ratio_pct"].add(*t.volume_diff_ratio_pct);
        }
    }
    nlohmann::ordered_json j;
    j["num_cases"] = reports.size();
    for (const auto& [target, metrics] : agg) {
        nlohmann::ordered_json tj;
        for (const auto& [metric, mom] : metrics) {
            tj[metric] = {{"mean", mom.mean()}, {"std", mom.stddev()}, {"count", mom.n}};
        }
        j["targets"][target] = std::move(tj);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open summary JSON for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out.flush())
        throw std::runtime_error("summary JSON write failed: " + path.string());
}

}  // namespace demseg
