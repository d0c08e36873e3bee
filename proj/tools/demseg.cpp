#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "demseg/cascade.hpp"
#include "demseg/checkpoint.hpp"
#include "demseg/dataset.hpp"
#include "demseg/metrics.hpp"
#include "demseg/miv_io.hpp"
#include "demseg/phantom.hpp"
#include "demseg/preprocess.hpp"

namespace fs = std::filesystem;
using njson = nlohmann::ordered_json;
using namespace demseg;

namespace {

struct RunConfig {
    std::uint64_t seed = 42;
    PhantomConfig phantom;
    int n_cases = 100;
    double fraction = 0.67;
    PreprocessConfig pre;
    StageConfig stage1 = default_stage1();
    StageConfig stage2 = default_stage2();
    int roi_margin = 5;
    ClassifierRule rule;
};

[[noreturn]] void bad_field(const std::string& name, const std::string& why) {
    throw std::runtime_error("config field " + name + ": " + why);
}

double jnum(const njson& j, const std::string& name, double def) {
    if (!j.contains(name)) return def;
    if (!j[name].is_number()) bad_field(name, "expected a number");
    return j[name].get<double>();
}

int jint(const njson& j, const std::string& name, int def) {
    if (!j.contains(name)) return def;
    if (!j[name].is_number_integer()) bad_field(name, "expected an integer");
    return j[name].get<int>();
}

void jrange(const njson& j, const std::string& name, double& lo, double& hi) {
    if (!j.contains(name)) return;
    if (!j[name].is_array() || j[name].size() != 2) bad_field(name, "expected [lo, hi]");
    lo = j[name][0].get<double>();
    hi = j[name][1].get<double>();
}

Spacing jspacing(const njson& j, const std::string& name, Spacing def) {
    if (!j.contains(name)) return def;
    if (!j[name].is_array() || j[name].size() != 3) bad_field(name, "expected [dz, dy, dx]");
    return Spacing{j[name][0].get<double>(), j[name][1].get<double>(), j[name][2].get<double>()};
}

void apply_phantom(const njson& j, RunConfig& rc) {
    PhantomConfig& p = rc.phantom;
    if (j.contains("shape")) {
        if (!j["shape"].is_array() || j["shape"].size() != 3)
            bad_field("phantom.shape", "expected [z, y, x]");
        p.shape = Shape3{j["shape"][0].get<int>(), j["shape"][1].get<int>(),
                         j["shape"][2].get<int>()};
    }
    p.spacing = jspacing(j, "spacing", p.spacing);
    rc.n_cases = jint(j, "n_cases", rc.n_cases);
    rc.fraction = jnum(j, "pathological_fraction", rc.fraction);
    jrange(j, "cavity_radius", p.cavity_radius_min, p.cavity_radius_max);
    jrange(j, "myo_thickness", p.myo_thickness_min, p.myo_thickness_max);
    p.infarct_probability = jnum(j, "infarct_probability", p.infarct_probability);
    jrange(j, "infarct_angle_deg", p.infarct_angle_min_deg, p.infarct_angle_max_deg);
    p.no_reflow_probability = jnum(j, "no_reflow_probability", p.no_reflow_probability);
    if (j.contains("intensity_means")) {
        const njson& m = j["intensity_means"];
        p.mean_background = jnum(m, "background", p.mean_background);
        p.mean_blood = jnum(m, "blood", p.mean_blood);
        p.mean_myocardium = jnum(m, "myocardium", p.mean_myocardium);
        p.mean_infarct = jnum(m, "infarct", p.mean_infarct);
        p.mean_no_reflow = jnum(m, "no_reflow", p.mean_no_reflow);
    }
    p.noise_sigma = jnum(j, "noise_sigma", p.noise_sigma);
    p.min_lesion_voxels = jint(j, "min_lesion_voxels", p.min_lesion_voxels);
}

void apply_stage(const njson& j, StageConfig& s, const std::string& prefix) {
    if (j.contains("patch_size")) {
        if (!j["patch_size"].is_array() || j["patch_size"].size() != 2)
            bad_field(prefix + ".patch_size", "expected [h, w]");
        s.patch_h = j["patch_size"][0].get<int>();
        s.patch_w = j["patch_size"][1].get<int>();
    }
    s.batch_size = jint(j, "batch_size", s.batch_size);
    s.iters_per_epoch = jint(j, "iters_per_epoch", s.iters_per_epoch);
    s.num_classes = jint(j, "num_classes", s.num_classes);
    s.net.num_classes = s.num_classes;
    if (j.contains("net")) {
        const njson& n = j["net"];
        s.net.depth = jint(n, "depth", s.net.depth);
        s.net.base_channels = jint(n, "base_channels", s.net.base_channels);
        s.net.negative_slope = jnum(n, "negative_slope", s.net.negative_slope);
        s.net.norm_epsilon = jnum(n, "norm_epsilon", s.net.norm_epsilon);
    }
    if (j.contains("hyper")) {
        const njson& h = j["hyper"];
        s.hyper.lr0 = jnum(h, "lr0", s.hyper.lr0);
        s.hyper.momentum = jnum(h, "momentum", s.hyper.momentum);
        s.hyper.max_epochs = jint(h, "max_epochs", s.hyper.max_epochs);
        s.hyper.poly_exponent = jnum(h, "poly_exponent", s.hyper.poly_exponent);
        s.hyper.dice_epsilon = jnum(h, "dice_epsilon", s.hyper.dice_epsilon);
    }
    if (!s.valid()) bad_field(prefix, "invalid stage configuration");
}

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    njson j;
    try {
        in >> j;
    } catch (const njson::exception& e) {
        throw std::runtime_error("malformed config file " + path + ": " + e.what());
    }
    if (j.contains("seed")) rc.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("phantom")) apply_phantom(j["phantom"], rc);
    if (j.contains("preprocess")) {
        rc.pre.target_spacing = jspacing(j["preprocess"], "target_spacing",
                                         rc.pre.target_spacing);
        rc.pre.zscore_epsilon = jnum(j["preprocess"], "zscore_epsilon", rc.pre.zscore_epsilon);
        if (!rc.pre.valid()) bad_field("preprocess", "invalid preprocessing configuration");
    }
    if (j.contains("stage1")) apply_stage(j["stage1"], rc.stage1, "stage1");
    if (j.contains("stage2")) apply_stage(j["stage2"], rc.stage2, "stage2");
    rc.roi_margin = jint(j, "roi_margin", rc.roi_margin);
    if (rc.roi_margin < 0) bad_field("roi_margin", "must be nonnegative");
    if (j.contains("classifier")) {
        rc.rule.min_voxels = jint(j["classifier"], "min_voxels", rc.rule.min_voxels);
        if (!rc.rule.valid()) bad_field("classifier.min_voxels", "must be at least 1");
    }
    return rc;
}

njson stage_json(const StageConfig& s) {
    return njson{{"stage", s.stage},
                 {"patch_size", {s.patch_h, s.patch_w}},
                 {"batch_size", s.batch_size},
                 {"iters_per_epoch", s.iters_per_epoch},
                 {"num_classes", s.num_classes},
                 {"net",
                  {{"in_channels", s.net.in_channels},
                   {"num_classes", s.net.num_classes},
                   {"depth", s.net.depth},
                   {"base_channels", s.net.base_channels},
                   {"negative_slope", s.net.negative_slope},
                   {"norm_epsilon", s.net.norm_epsilon}}},
                 {"hyper",
                  {{"lr0", s.hyper.lr0},
                   {"momentum", s.hyper.momentum},
                   {"max_epochs", s.hyper.max_epochs},
                   {"poly_exponent", s.hyper.poly_exponent},
                   {"dice_epsilon", s.hyper.dice_epsilon}}}};
}

njson config_json(const RunConfig& rc) {
    njson j;
    j["seed"] = rc.seed;
    j["preprocess"] = {
        {"order", {"resample", "zscore"}},
        {"target_spacing",
         {rc.pre.target_spacing.dz, rc.pre.target_spacing.dy, rc.pre.target_spacing.dx}},
        {"zscore_epsilon", rc.pre.zscore_epsilon}};
    j["stage1"] = stage_json(rc.stage1);
    j["stage2"] = stage_json(rc.stage2);
    j["roi_margin"] = rc.roi_margin;
    j["classifier"] = {{"min_voxels", rc.rule.min_voxels}};
    return j;
}

void write_json_file(const njson& j, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

int cmd_phantom_gen(const RunConfig& rc, const std::string& out_dir) {
    const auto cases = generate_dataset(rc.phantom, rc.n_cases, rc.fraction, rc.seed);
    write_dataset(cases, out_dir, rc.seed);
    std::cout << "wrote " << cases.size() << " cases to " << out_dir << "\n";
    return 0;
}

int cmd_preprocess(const RunConfig& rc, const std::string& in_dir, const std::string& out_dir,
                   int jobs) {
    std::vector<CaseRecord> cases = load_dataset(in_dir);
    parallel_for(cases.size(), jobs, [&](std::size_t i) {
        CaseRecord& c = cases[i];
        c.image = zscore(resample_image(c.image, rc.pre.target_spacing), rc.pre.zscore_epsilon);
        if (c.labels) c.labels = resample_label(*c.labels, rc.pre.target_spacing);
    });
    write_dataset(cases, out_dir, dataset_seed(in_dir));
    // record the preprocessing applied, in order, in the output manifest
    std::ifstream in(fs::path(out_dir) / "manifest.json");
    njson j;
    in >> j;
    j["preprocess"] = {
        {"order", {"resample", "zscore"}},
        {"target_spacing",
         {rc.pre.target_spacing.dz, rc.pre.target_spacing.dy, rc.pre.target_spacing.dx}},
        {"zscore_epsilon", rc.pre.zscore_epsilon}};
    write_json_file(j, fs::path(out_dir) / "manifest.json");
    std::cout << "preprocessed " << cases.size() << " cases to " << out_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data_dir, int stage_id, int fold,
              const std::string& out_dir) {
    std::vector<CaseRecord> cases = load_dataset(data_dir);
    assign_folds(cases, kNumFolds, rc.seed);
    const StageConfig& stage = stage_id == 1 ? rc.stage1 : rc.stage2;

    std::vector<StageCase> stage_cases;
    stage_cases.reserve(cases.size());
    for (const CaseRecord& c : cases)
        stage_cases.push_back(make_stage_case(c, stage, rc.pre, rc.roi_margin));

    const std::uint64_t train_seed = mix_seed(rc.seed, 100 * stage_id + fold);
    const TrainResult result = train_stage(stage_cases, stage, fold, train_seed);

    fs::create_directories(out_dir);
    const std::string tag = "stage" + std::to_string(stage_id) + "_fold" + std::to_string(fold);
    const fs::path ckpt = fs::path(out_dir) / (tag + ".ckpt");
    save_checkpoint(result.params, ckpt);

    const fs::path trace_path = fs::path(out_dir) / (tag + "_trace.txt");
    std::ofstream trace(trace_path, std::ios::trunc);
    char line[128];
    for (const TraceEntry& t : result.trace) {
        std::snprintf(line, sizeof(line), "%d %d %.17g %.17g\n", t.epoch, t.iter, t.lr, t.loss);
        trace << line;
    }
    if (!trace.flush()) throw std::runtime_error("write failed: " + trace_path.string());

    njson manifest;
    manifest["command"] = "train";
    manifest["dataset"] = data_dir;
    manifest["stage"] = stage_id;
    manifest["held_out_fold"] = fold;
    manifest["train_seed"] = train_seed;
    manifest["config"] = config_json(rc);
    njson folds = njson::object();
    for (const CaseRecord& c : cases) folds[c.case_id] = c.fold;
    manifest["fold_assignment"] = std::move(folds);
    manifest["checkpoint"] = ckpt.filename().string();
    manifest["loss_trace"] = trace_path.filename().string();
    write_json_file(manifest, fs::path(out_dir) / (tag + "_manifest.json"));

    std::cout << "trained " << tag << ": " << result.trace.size() << " iterations, final loss "
              << result.trace.back().loss << "\n";
    return 0;
}

std::vector<UNetParams> load_checkpoints(const std::vector<std::string>& paths) {
    if (paths.size() > 5)
        throw std::runtime_error("at most 5 checkpoints per stage are supported");
    std::vector<UNetParams> out;
    out.reserve(paths.size());
    for (const std::string& p : paths) out.push_back(load_checkpoint(p));
    return out;
}

void write_classification_csv(const std::vector<std::pair<std::string, CaseClass>>& rows,
                              const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "case_id,prediction\n";
    for (const auto& [id, cls] : rows) out << id << ',' << to_string(cls) << '\n';
    if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

int cmd_predict(const RunConfig& rc, const std::string& data_dir,
                const std::vector<std::string>& s1_paths,
                const std::vector<std::string>& s2_paths, const std::string& out_dir, int jobs) {
    const std::vector<CaseRecord> cases = load_dataset(data_dir);
    const std::vector<UNetParams> s1 = load_checkpoints(s1_paths);
    const std::vector<UNetParams> s2 = load_checkpoints(s2_paths);
    PipelineConfig pc{rc.pre, rc.stage1, rc.stage2, rc.roi_margin, rc.rule};

    fs::create_directories(out_dir);
    std::vector<std::pair<std::string, CaseClass>> rows(cases.size());
    parallel_for(cases.size(), jobs, [&](std::size_t i) {
        const PipelineResult r = run_pipeline(cases[i].image, s1, s2, pc);
        write_miv(r.labels, fs::path(out_dir) / (cases[i].case_id + "_pred.miv"));
        rows[i] = {cases[i].case_id, r.classification};
    });
    std::sort(rows.begin(), rows.end());
    write_classification_csv(rows, fs::path(out_dir) / "classification.csv");

    njson manifest;
    manifest["command"] = "predict";
    manifest["dataset"] = data_dir;
    manifest["stage1_checkpoints"] = s1_paths;
    manifest["stage2_checkpoints"] = s2_paths;
    manifest["config"] = config_json(rc);
    write_json_file(manifest, fs::path(out_dir) / "run_manifest.json");

    std::cout << "predicted " << cases.size() << " cases to " << out_dir << "\n";
    return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir,
                 const std::string& out_dir, int jobs) {
    std::vector<fs::path> pred_files;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > 9 && name.ends_with("_pred.miv")) pred_files.push_back(e.path());
    }
    std::sort(pred_files.begin(), pred_files.end());
    if (pred_files.empty())
        throw std::runtime_error("no *_pred.miv files in " + pred_dir);

    const std::vector<CaseRecord> gt_cases = load_dataset(gt_dir);
    std::map<std::string, const CaseRecord*> by_id;
    for (const CaseRecord& c : gt_cases) by_id[c.case_id] = &c;

    std::vector<SegReport> reports(pred_files.size());
    parallel_for(pred_files.size(), jobs, [&](std::size_t i) {
        const std::string name = pred_files[i].filename().string();
        const std::string case_id = name.substr(0, name.size() - 9);
        const auto it = by_id.find(case_id);
        if (it == by_id.end() || !it->second->labels)
            throw std::runtime_error("no ground truth for case " + case_id);
        const LabelMap pred = read_miv_labels(pred_files[i]);
        reports[i] = evaluate_case(pred, *it->second->labels);
        reports[i].case_id = case_id;
    });

    fs::create_directories(out_dir);
    write_report_csv(reports, fs::path(out_dir) / "report.csv");
    write_summary_json(reports, fs::path(out_dir) / "summary.json");

    // fold classification accuracy into the summary when predictions carry it
    const fs::path cls_csv = fs::path(pred_dir) / "classification.csv";
    if (fs::exists(cls_csv)) {
        std::ifstream in(cls_csv);
        std::string line;
        std::getline(in, line);  // header
        std::vector<CaseClass> pred_cls, true_cls;
        while (std::getline(in, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            const std::string id = line.substr(0, comma);
            const auto it = by_id.find(id);
            if (it == by_id.end() || !it->second->pathological) continue;
            pred_cls.push_back(line.substr(comma + 1) == "pathological"
                                   ? CaseClass::Pathological
                                   : CaseClass::Normal);
            true_cls.push_back(*it->second->pathological ? CaseClass::Pathological
                                                         : CaseClass::Normal);
        }
        if (!pred_cls.empty()) {
            std::ifstream sin(fs::path(out_dir) / "summary.json");
            njson j;
            sin >> j;
            j["classification"] = {{"accuracy", accuracy(pred_cls, true_cls)},
                                   {"cases", pred_cls.size()}};
            write_json_file(j, fs::path(out_dir) / "summary.json");
        }
    }
    std::cout << "evaluated " << reports.size() << " cases to " << out_dir << "\n";
    return 0;
}

int cmd_classify(const RunConfig& rc, const std::string& pred_dir, const std::string& out_file) {
    std::vector<std::pair<std::string, CaseClass>> rows;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > 9 && name.ends_with("_pred.miv")) {
            const LabelMap labels = read_miv_labels(e.path());
            rows.emplace_back(name.substr(0, name.size() - 9), classify(labels, rc.rule));
        }
    }
    if (rows.empty()) throw std::runtime_error("no *_pred.miv files in " + pred_dir);
    std::sort(rows.begin(), rows.end());
    write_classification_csv(rows, out_file);
    std::cout << "classified " << rows.size() << " cases to " << out_file << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded LV and lesion segmentation on delayed-enhancement MR volumes"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    std::uint64_t seed_flag = 0;
    auto* seed_opt = app.add_option("--seed", seed_flag, "override the configured seed");
    int jobs = 1;
    app.add_option("--jobs", jobs, "case-level parallelism")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic dataset");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    int gen_cases = -1;
    gen->add_option("--cases", gen_cases, "number of cases");
    double gen_fraction = -1.0;
    gen->add_option("--fraction", gen_fraction, "pathological fraction");

    auto* prep = app.add_subcommand("preprocess", "resample and normalize a dataset");
    std::string prep_in, prep_out;
    prep->add_option("--in", prep_in, "input dataset")->required();
    prep->add_option("--out", prep_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train one stage for one held-out fold");
    std::string train_data, train_out;
    int train_stage_id = 0, train_fold = -1, train_epochs = 0;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--stage", train_stage_id, "stage id")->required()->check(CLI::Range(1, 2));
    train->add_option("--fold", train_fold, "held-out fold")
        ->required()
        ->check(CLI::Range(0, kNumFolds - 1));
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--epochs", train_epochs, "override max epochs");

    auto* predict = app.add_subcommand("predict", "run the full pipeline on a dataset");
    std::string pred_data, pred_out;
    std::vector<std::string> s1_ckpts, s2_ckpts;
    predict->add_option("--data", pred_data, "dataset directory")->required();
    predict->add_option("--stage1-ckpt", s1_ckpts, "stage-1 checkpoint (repeatable)")
        ->required();
    predict->add_option("--stage2-ckpt", s2_ckpts, "stage-2 checkpoint (repeatable)")
        ->required();
    predict->add_option("--out", pred_out, "output directory")->required();

    auto* eval = app.add_subcommand("evaluate", "score predictions against ground truth");
    std::string eval_pred, eval_gt, eval_out;
    eval->add_option("--pred", eval_pred, "prediction directory")->required();
    eval->add_option("--gt", eval_gt, "ground-truth dataset directory")->required();
    eval->add_option("--out", eval_out, "report directory")->required();

    auto* cls = app.add_subcommand("classify", "apply the lesion-count rule to predictions");
    std::string cls_pred, cls_out;
    int cls_min_voxels = 0;
    cls->add_option("--pred", cls_pred, "prediction directory")->required();
    cls->add_option("--out", cls_out, "output CSV")->required();
    cls->add_option("--min-voxels", cls_min_voxels, "override the lesion-count threshold");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        RunConfig rc = load_run_config(config_path);
        if (*seed_opt) rc.seed = seed_flag;
        if (*gen) {
            if (gen_cases >= 0) rc.n_cases = gen_cases;
            if (gen_fraction >= 0.0) rc.fraction = gen_fraction;
            return cmd_phantom_gen(rc, gen_out);
        }
        if (*prep) return cmd_preprocess(rc, prep_in, prep_out, jobs);
        if (*train) {
            if (train_epochs > 0) {
                rc.stage1.hyper.max_epochs = train_epochs;
                rc.stage2.hyper.max_epochs = train_epochs;
            }
            return cmd_train(rc, train_data, train_stage_id, train_fold, train_out);
        }
        if (*predict) return cmd_predict(rc, pred_data, s1_ckpts, s2_ckpts, pred_out, jobs);
        if (*eval) return cmd_evaluate(eval_pred, eval_gt, eval_out, jobs);
        if (*cls) {
            if (cls_min_voxels > 0) rc.rule.min_voxels = cls_min_voxels;
            return cmd_classify(rc, cls_pred, cls_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
