#include "demseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>

#include "demseg/rng.hpp"

namespace demseg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kWedgeMargin = 1.5;     // keeps the wedge off the annulus borders
constexpr double kCoreExtraMargin = 1.5; // additional radial margin for the no-reflow core
constexpr double kMaxCenterDrift = 4.0;  // total drift bound from the base center
constexpr int kMaxAttempts = 64;

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// angle of (y, x) relative to the center, wrapped to [0, 2*pi)
double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * kPi);
    return a < 0.0 ? a + 2.0 * kPi : a;
}

bool in_wedge(double r, double theta, double r_lo, double r_hi, double a0, double extent) {
    if (r < r_lo || r > r_hi) return false;
    return wrap_angle(theta - a0) < extent;
}

struct Geometry {
    double cavity_radius = 0.0;
    double thickness = 0.0;
    std::vector<double> cy, cx;  // per-slice centers
    bool infarct = false;
    bool no_reflow = false;
    double angle0 = 0.0;
    double extent = 0.0;
    int z_lo = 0, z_hi = -1;  // infarct slice range, inclusive
};

Geometry draw_geometry(const PhantomConfig& cfg, Rng& rng, std::optional<bool> force_infarct) {
    Geometry g;
    const double u_inf = rng.uniform();
    const double u_nr = rng.uniform();
    g.infarct = force_infarct ? *force_infarct : u_inf < cfg.infarct_probability;
    g.no_reflow = g.infarct && u_nr < cfg.no_reflow_probability;

    g.cavity_radius = rng.uniform(cfg.cavity_radius_min, cfg.cavity_radius_max);
    g.thickness = rng.uniform(cfg.myo_thickness_min, cfg.myo_thickness_max);

    const double base_y = (cfg.shape.y - 1) / 2.0;
    const double base_x = (cfg.shape.x - 1) / 2.0;
    g.cy.resize(cfg.shape.z);
    g.cx.resize(cfg.shape.z);
    g.cy[0] = base_y + rng.uniform(-2.0, 2.0);
    g.cx[0] = base_x + rng.uniform(-2.0, 2.0);
    for (int z = 1; z < cfg.shape.z; ++z) {
        g.cy[z] = clampd(g.cy[z - 1] + rng.uniform(-2.0, 2.0), base_y - kMaxCenterDrift,
                         base_y + kMaxCenterDrift);
        g.cx[z] = clampd(g.cx[z - 1] + rng.uniform(-2.0, 2.0), base_x - kMaxCenterDrift,
                         base_x + kMaxCenterDrift);
    }

    g.angle0 = rng.uniform(0.0, 2.0 * kPi);
    g.extent = rng.uniform(cfg.infarct_angle_min_deg, cfg.infarct_angle_max_deg) * kPi / 180.0;
    const int z = cfg.shape.z;
    const int len = static_cast<int>(rng.uniform_int((z + 1) / 2, z));
    g.z_lo = static_cast<int>(rng.uniform_int(0, z - len));
    g.z_hi = g.z_lo + len - 1;
    return g;
}

LabelMap rasterize(const PhantomConfig& cfg, const Geometry& g) {
    LabelMap labels;
    labels.shape = cfg.shape;
    labels.spacing = cfg.spacing;
    labels.data.assign(cfg.shape.count(), kBackground);

    const double r_cav = g.cavity_radius;
    const double r_out = r_cav + g.thickness;
    const double w_lo = r_cav + kWedgeMargin;
    const double w_hi = r_out - kWedgeMargin;
    const double c_lo = w_lo + kCoreExtraMargin;
    const double c_hi = w_hi - kCoreExtraMargin;
    const double a_margin = std::min(g.extent / 4.0, 15.0 * kPi / 180.0);

    std::vector<std::uint8_t> core(cfg.shape.count(), 0);
    for (int z = 0; z < cfg.shape.z; ++z) {
        const bool wedge_slice = g.infarct && z >= g.z_lo && z <= g.z_hi;
        for (int y = 0; y < cfg.shape.y; ++y) {
            for (int x = 0; x < cfg.shape.x; ++x) {
                const double dy = y - g.cy[z];
                const double dx = x - g.cx[z];
                const double r = std::sqrt(dy * dy + dx * dx);
                std::uint8_t lab = kBackground;
                if (r <= r_cav)
                    lab = kCavity;
                else if (r <= r_out)
                    lab = kMyocardium;
                if (wedge_slice && lab == kMyocardium) {
                    const double theta = std::atan2(dy, dx);
                    if (in_wedge(r, theta, w_lo, w_hi, g.angle0, g.extent)) {
                        lab = kInfarction;
                        if (g.no_reflow && c_hi > c_lo &&
                            in_wedge(r, theta, c_lo, c_hi, g.angle0 + a_margin,
                                     g.extent - 2.0 * a_margin))
                            core[labels.index(z, y, x)] = 1;
                    }
                }
                labels.at(z, y, x) = lab;
            }
        }
    }

    // Promote core candidates whose 4-neighborhood stays in the wedge, so the
    // no-reflow region sits strictly inside the infarct.
    for (int z = 0; z < cfg.shape.z; ++z) {
        for (int y = 0; y < cfg.shape.y; ++y) {
            for (int x = 0; x < cfg.shape.x; ++x) {
                if (!core[labels.index(z, y, x)]) continue;
                const bool interior =
                    y > 0 && y + 1 < cfg.shape.y && x > 0 && x + 1 < cfg.shape.x &&
                    labels.at(z, y - 1, x) >= kInfarction &&
                    labels.at(z, y + 1, x) >= kInfarction &&
                    labels.at(z, y, x - 1) >= kInfarction &&
                    labels.at(z, y, x + 1) >= kInfarction;
                if (interior) labels.at(z, y, x) = kNoReflow;
            }
        }
    }
    return labels;
}

Volume render_image(const PhantomConfig& cfg, const LabelMap& labels, Rng& rng) {
    const double means[kNumLabels] = {cfg.mean_background, cfg.mean_blood, cfg.mean_myocardium,
                                      cfg.mean_infarct, cfg.mean_no_reflow};
    Volume img;
    img.shape = cfg.shape;
    img.spacing = cfg.spacing;
    img.data.resize(cfg.shape.count());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = means[labels.data[i]];
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
        img.data[i] = static_cast<float>(v);
    }
    return img;
}

CaseRecord make_case(const PhantomConfig& cfg, std::uint64_t case_seed,
                     std::optional<bool> force_infarct) {
    if (!cfg.valid())
        throw std::invalid_argument("PhantomConfig: geometry infeasible for the grid");
    Rng rng(mix_seed(cfg.seed, case_seed));
    const Geometry g = draw_geometry(cfg, rng, force_infarct);
    CaseRecord rec;
    rec.labels = rasterize(cfg, g);
    rec.image = render_image(cfg, *rec.labels, rng);
    rec.pathological = count_labels(*rec.labels, {kInfarction, kNoReflow}) > 0;
    rec.seed = case_seed;
    rec.case_id = "case_" + std::to_string(case_seed);
    return rec;
}

}  // namespace

bool PhantomConfig::valid() const {
    if (shape.z < 1 || shape.y < 8 || shape.x < 8) return false;
    if (!spacing.valid()) return false;
    if (!(cavity_radius_min >= 3.0 && cavity_radius_max >= cavity_radius_min)) return false;
    if (!(myo_thickness_min >= 2.0 * kWedgeMargin + 1.0 &&
          myo_thickness_max >= myo_thickness_min))
        return false;
    if (infarct_probability < 0.0 || infarct_probability > 1.0) return false;
    if (no_reflow_probability < 0.0 || no_reflow_probability > 1.0) return false;
    if (!(infarct_angle_min_deg > 0.0 && infarct_angle_max_deg >= infarct_angle_min_deg &&
          infarct_angle_max_deg <= 360.0))
        return false;
    if (noise_sigma < 0.0) return false;
    if (min_lesion_voxels < 1) return false;
    // outer radius plus drift must stay inside the slice with a margin
    const double reach = cavity_radius_max + myo_thickness_max + kMaxCenterDrift + 1.0;
    return reach <= std::min(shape.y, shape.x) / 2.0;
}

CaseRecord generate_case(const PhantomConfig& config, std::uint64_t case_seed) {
    return make_case(config, case_seed, std::nullopt);
}

std::vector<CaseRecord> generate_dataset(const PhantomConfig& config, int n_cases,
                                         double pathological_fraction, std::uint64_t seed) {
    if (n_cases < 1)
        throw std::invalid_argument("generate_dataset: n_cases must be positive");
    if (!(pathological_fraction >= 0.0 && pathological_fraction <= 1.0))
        throw std::invalid_argument("generate_dataset: pathological_fraction outside [0,1]");
    if (!config.valid())
        throw std::invalid_argument("PhantomConfig: geometry infeasible for the grid");

    const int n_path = static_cast<int>(std::llround(n_cases * pathological_fraction));
    std::vector<bool> pathological(static_cast<std::size_t>(n_cases), false);
    std::fill(pathological.begin(), pathological.begin() + n_path, true);
    Rng assign_rng(mix_seed(seed, 0x9a7e));
    std::vector<int> order(static_cast<std::size_t>(n_cases));
    for (int i = 0; i < n_cases; ++i) order[static_cast<std::size_t>(i)] = i;
    assign_rng.shuffle(order);
    std::vector<bool> flags(static_cast<std::size_t>(n_cases));
    for (int i = 0; i < n_cases; ++i)
        flags[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
            pathological[static_cast<std::size_t>(i)];

    std::vector<CaseRecord> cases;
    cases.reserve(static_cast<std::size_t>(n_cases));
    for (int i = 0; i < n_cases; ++i) {
        const bool want_path = flags[static_cast<std::size_t>(i)];
        CaseRecord rec;
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            const std::uint64_t case_seed =
                mix_seed(seed, static_cast<std::uint64_t>(i) * 131 + attempt + 1);
            rec = make_case(config, case_seed, want_path);
            const std::size_t lesions =
                count_labels(*rec.labels, {kInfarction, kNoReflow});
            if (want_path ? lesions >= static_cast<std::size_t>(config.min_lesion_voxels)
                          : lesions == 0) {
                ok = true;
                break;
            }
        }
        if (!ok)
            throw std::runtime_error(
                "generate_dataset: could not satisfy the minimum lesion size; "
                "enlarge the grid or the infarct angle range");
        char id[16];
        std::snprintf(id, sizeof(id), "case_%03d", i);
        rec.case_id = id;
        cases.push_back(std::move(rec));
    }
    return cases;
}

}  // namespace demseg
