#pragma once

#include <cstdint>
#include <vector>

#include "demseg/dataset.hpp"
#include "demseg/volume.hpp"

namespace demseg {

struct PhantomConfig {
    Shape3 shape{6, 64, 64};
    Spacing spacing{10.0, 1.458, 1.458};
    double cavity_radius_min = 8.0;
    double cavity_radius_max = 12.0;
    double myo_thickness_min = 6.0;
    double myo_thickness_max = 10.0;
    double infarct_probability = 0.6;
    double infarct_angle_min_deg = 60.0;
    double infarct_angle_max_deg = 150.0;
    double no_reflow_probability = 0.5;  // conditional on an infarct being present
    // class mean intensities; background is everything outside the LV
    double mean_background = 50.0;
    double mean_blood = 1000.0;
    double mean_myocardium = 200.0;
    double mean_infarct = 900.0;
    double mean_no_reflow = 100.0;
    double noise_sigma = 40.0;
    int min_lesion_voxels = 30;
    std::uint64_t seed = 0;

    bool valid() const;
};

CaseRecord generate_case(const PhantomConfig& config, std::uint64_t case_seed);

// Exactly round(n_cases * pathological_fraction) cases are pathological, each
// with at least config.min_lesion_voxels lesion voxels.
std::vector<CaseRecord> generate_dataset(const PhantomConfig& config, int n_cases,
                                         double pathological_fraction, std::uint64_t seed);

}  // namespace demseg
