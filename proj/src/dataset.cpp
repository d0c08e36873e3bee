#include "demseg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "demseg/miv_io.hpp"

namespace demseg {

namespace {

nlohmann::ordered_json read_manifest_json(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open dataset manifest: " + path.string());
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed dataset manifest " + path.string() + ": " + e.what());
    }
    return j;
}

}  // namespace

void validate(const CaseRecord& rec) {
    if (rec.case_id.empty())
        throw std::invalid_argument("CaseRecord: empty case id");
    validate(rec.image);
    if (rec.labels) {
        validate(*rec.labels);
        if (!(rec.labels->shape == rec.image.shape))
            throw std::invalid_argument("CaseRecord " + rec.case_id +
                                        ": image/label shape mismatch");
        if (!(rec.labels->spacing == rec.image.spacing))
            throw std::invalid_argument("CaseRecord " + rec.case_id +
                                        ": image/label spacing mismatch");
    }
}

void write_dataset(const std::vector<CaseRecord>& cases, const std::filesystem::path& dir,
                   std::uint64_t dataset_seed) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j;
    j["seed"] = dataset_seed;
    j["cases"] = nlohmann::ordered_json::array();
    for (const CaseRecord& rec : cases) {
        validate(rec);
        const std::string img_name = rec.case_id + "_img.miv";
        write_miv(rec.image, dir / img_name);
        nlohmann::ordered_json c;
        c["case_id"] = rec.case_id;
        c["image"] = img_name;
        if (rec.labels) {
            const std::string lab_name = rec.case_id + "_lab.miv";
            write_miv(*rec.labels, dir / lab_name);
            c["labels"] = lab_name;
        }
        c["seed"] = rec.seed;
        if (rec.pathological)
            c["pathological"] = *rec.pathological;
        j["cases"].push_back(std::move(c));
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out.flush())
        throw std::runtime_error("failed to write dataset manifest in " + dir.string());
}

std::vector<CaseRecord> load_dataset(const std::filesystem::path& dir) {
    const nlohmann::ordered_json j = read_manifest_json(dir);
    if (!j.contains("cases") || !j["cases"].is_array())
        throw std::runtime_error("dataset manifest missing case list: " +
                                 (dir / "manifest.json").string());
    std::vector<CaseRecord> cases;
    for (const auto& c : j["cases"]) {
        CaseRecord rec;
        rec.case_id = c.at("case_id").get<std::string>();
        rec.image = read_miv_volume(dir / c.at("image").get<std::string>());
        if (c.contains("labels"))
            rec.labels = read_miv_labels(dir / c.at("labels").get<std::string>());
        if (c.contains("seed"))
            rec.seed = c.at("seed").get<std::uint64_t>();
        if (c.contains("pathological"))
            rec.pathological = c.at("pathological").get<bool>();
        validate(rec);
        cases.push_back(std::move(rec));
    }
    std::sort(cases.begin(), cases.end(),
              [](const CaseRecord& a, const CaseRecord& b) { return a.case_id < b.case_id; });
    return cases;
}

std::uint64_t dataset_seed(const std::filesystem::path& dir) {
    const nlohmann::ordered_json j = read_manifest_json(dir);
    return j.value("seed", std::uint64_t{0});
}

}  // namespace demseg
