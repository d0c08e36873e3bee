#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "demseg/volume.hpp"

namespace demseg {

struct CaseRecord {
    std::string case_id;
    Volume image;
    std::optional<LabelMap> labels;
    int fold = -1;  // -1 until assigned
    std::optional<bool> pathological;
    std::uint64_t seed = 0;
};

// image/label shape and spacing must agree when labels are present
void validate(const CaseRecord& rec);

// On-disk layout: <dir>/manifest.json plus one MIV pair per case
// (<case_id>_img.miv, <case_id>_lab.miv). The manifest lists case ids,
// per-case seeds and pathology flags.
void write_dataset(const std::vector<CaseRecord>& cases, const std::filesystem::path& dir,
                   std::uint64_t dataset_seed);
std::vector<CaseRecord> load_dataset(const std::filesystem::path& dir);

std::uint64_t dataset_seed(const std::filesystem::path& dir);

}  // namespace demseg
