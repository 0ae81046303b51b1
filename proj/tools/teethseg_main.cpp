#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "teethseg/audit.hpp"
#include "teethseg/image.hpp"
#include "teethseg/kernels.hpp"
#include "teethseg/ops.hpp"
#include "teethseg/pgm.hpp"
#include "teethseg/runconfig.hpp"
#include "teethseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace teethseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string one_line(std::string msg) {
    std::replace(msg.begin(), msg.end(), '\n', ';');
    return msg;
}

struct GenerateArgs {
    std::string out;
    int count = 64;
    std::uint64_t seed = 1;
    int width = 128, height = 64;
    bool force = false;
};

struct PreprocessArgs {
    std::string in, out;
    std::vector<int> radii = {1, 2, 3};
    int width = 0, height = 0;  // 0 keeps extents
};

struct TrainArgs {
    std::string config, data, out, resume, loss;
};

struct EvalArgs {
    std::string checkpoint, data, split = "test", csv;
    bool oracle = false;
};

struct PredictArgs {
    std::string checkpoint, image, out, overlay;
};

struct GradcheckArgs {
    std::uint64_t seed = 1;
    int seeds = 5;
    bool canary = false;
};

struct AblationArgs {
    std::string data, out, config;
};

int cmd_generate(const GenerateArgs& a) {
    if (a.count < 1) throw CLI::ValidationError("--count must be >= 1");
    if (fs::exists(a.out) && !fs::is_empty(a.out) && !a.force)
        throw CLI::ValidationError("output directory '" + a.out + "' is not empty (use --force)");
    fs::create_directories(a.out);
    auto samples = generate_synthetic(a.count, a.seed, a.width, a.height);
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    save_dataset(a.out, samples, make_split(ids, a.seed));
    std::printf("generate: wrote %d samples (%dx%d, seed %llu) to %s\n", a.count, a.width, a.height,
                static_cast<unsigned long long>(a.seed), a.out.c_str());
    return kExitOk;
}

int cmd_preprocess(const PreprocessArgs& a) {
    const SplitManifest split = load_split(a.in);
    fs::create_directories(fs::path(a.out) / "images");
    fs::create_directories(fs::path(a.out) / "masks");
    std::vector<std::string> failures;
    int done = 0;
    for (const auto* ids : {&split.train, &split.val, &split.test}) {
        for (const auto& id : *ids) {
            try {
                const Sample s = load_sample(a.in, id);
                const int w = a.width > 0 ? a.width : s.image.width;
                const int h = a.height > 0 ? a.height : s.image.height;
                write_pgm((fs::path(a.out) / "images" / (id + ".pgm")).string(),
                          preprocess_image(s.image, w, h, a.radii));
                write_pgm((fs::path(a.out) / "masks" / (id + ".pgm")).string(), resize_nearest(s.mask, w, h));
                ++done;
            } catch (const std::exception& e) {
                failures.push_back(id);
                std::fprintf(stderr, "teethseg: error: preprocess %s: %s\n", id.c_str(),
                             one_line(e.what()).c_str());
            }
        }
    }
    save_split(a.out, split);
    std::printf("preprocess: %d samples into %s\n", done, a.out.c_str());
    return failures.empty() ? kExitOk : kExitRuntime;
}

int cmd_train(const TrainArgs& a) {
    RunConfig rc = load_run_config(a.config);
    if (!a.loss.empty()) {
        if (a.loss != "squared-dice" && a.loss != "eq1-verbatim")
            throw CLI::ValidationError("--loss must be squared-dice or eq1-verbatim");
        rc.loss = a.loss;
    }
    const std::string data = a.data.empty() ? rc.data_dir : a.data;
    const std::string out = a.out.empty() ? rc.out_dir : a.out;
    if (data.empty()) throw CLI::ValidationError("no dataset directory (--data or config data_dir)");
    if (out.empty()) throw CLI::ValidationError("no output directory (--out or config out_dir)");

    TrainResult r = train(rc.model, data, out, rc.train_options(), a.resume);
    if (!r.log.empty()) {
        const EpochRow& last = r.log.back();
        std::printf("train: %zu epochs, final val_loss %.6f val_dsc %.4f val_ji %.4f (lr %.3g)\n",
                    r.log.size(), last.val_loss, last.val_dsc, last.val_ji, last.lr);
    } else {
        std::printf("train: wrote initialization checkpoint only (epochs=0)\n");
    }
    std::printf("train: checkpoints at %s and %s, log at %s\n", r.last_path.c_str(), r.best_path.c_str(),
                r.log_path.c_str());
    return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
    TrainState st = load_checkpoint(a.checkpoint);
    EvalResult ev = evaluate(st, a.data, a.split, a.oracle);
    const std::string label = a.oracle ? "ORACLE" : fs::path(a.checkpoint).stem().string();
    if (!a.csv.empty()) write_metrics_csv(a.csv, label, ev.report);
    std::printf("model,acc,dsc,ji,precision,recall,specificity\n");
    std::printf("%s\n", metrics_csv_row(label, ev.report.macro).c_str());
    return kExitOk;
}

int cmd_predict(const PredictArgs& a) {
    TrainState st = load_checkpoint(a.checkpoint);
    const GrayImage img = read_pgm_image(a.image);
    const LabelMask mask = predict_mask(st, img);
    write_pgm(a.out, mask);
    if (!a.overlay.empty()) {
        GrayImage ov(img.width, img.height);
        for (std::size_t i = 0; i < ov.size(); ++i) {
            const double cls_gray = mask.v[i] * 255.0 / 32.0;
            ov.v[i] = 0.5 * img.v[i] + 0.5 * cls_gray;
        }
        write_pgm(a.overlay, ov);
    }
    std::printf("predict: wrote %s\n", a.out.c_str());
    return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& a) {
    debug::flip_relu_backward = a.canary;
    const auto rows = run_grad_audit(a.seed, a.seeds);
    std::printf("%-28s %13s %10s  %s\n", "op", "worst_rel_err", "threshold", "status");
    for (const auto& r : rows)
        std::printf("%-28s %13.3e %10.0e  %s\n", r.name.c_str(), r.worst, r.threshold,
                    r.pass ? "ok" : "FAIL");
    const bool ok = audit_passed(rows);
    std::printf("gradcheck: %s (%d seed%s from %llu)\n", ok ? "all passed" : "FAILED", a.seeds,
                a.seeds == 1 ? "" : "s", static_cast<unsigned long long>(a.seed));
    return ok ? kExitOk : kExitRuntime;
}

int cmd_ablation(const AblationArgs& a) {
    const RunConfig base = load_run_config(a.config);
    struct Variation {
        const char* name;
        bool ds, swin, tab;
    };
    const Variation plan[] = {
        {"VARIATION A", false, false, false},
        {"VARIATION B", true, false, false},
        {"VARIATION C", false, true, false},
        {"VARIATION D", false, false, true},
        {"PROPOSED", true, true, true},
    };
    fs::create_directories(a.out);
    const std::string csv_path = (fs::path(a.out) / "ablation.csv").string();
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("ablation: cannot write " + csv_path);
    csv << "model,acc,dsc,ji,precision,recall,specificity\n";

    for (const auto& v : plan) {
        try {
            RunConfig rc = base;
            rc.model.use_deep_supervision = v.ds;
            rc.model.use_swin = v.swin;
            rc.model.use_tab = v.tab;
            std::string run_dir = (fs::path(a.out) / v.name).string();
            std::replace(run_dir.begin(), run_dir.end(), ' ', '_');
            TrainResult r = train(rc.model, a.data, run_dir, rc.train_options());
            EvalResult ev = evaluate(r.state, a.data, "test");
            csv << metrics_csv_row(v.name, ev.report.macro) << '\n';
            csv.flush();
            std::printf("ablation: %s done (test dsc %.4f, seed %llu)\n", v.name, ev.report.macro.dsc,
                        static_cast<unsigned long long>(base.seed));
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("ablation: ") + v.name + " failed: " + e.what());
        }
    }
    std::printf("ablation: wrote %s\n", csv_path.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multiclass tooth segmentation workbench (panoramic radiograph stand-ins)"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* sc_gen = app.add_subcommand("generate", "render a synthetic dataset with masks and split.json");
    sc_gen->add_option("--out", gen.out, "output dataset directory")->required();
    sc_gen->add_option("--count", gen.count, "number of samples")->capture_default_str();
    sc_gen->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
    sc_gen->add_option("--width", gen.width, "image width in pixels")->capture_default_str();
    sc_gen->add_option("--height", gen.height, "image height in pixels")->capture_default_str();
    sc_gen->add_flag("--force", gen.force, "overwrite a non-empty output directory");

    PreprocessArgs pre;
    auto* sc_pre = app.add_subcommand("preprocess", "resize, normalize and morphology-enhance a dataset");
    sc_pre->add_option("--in", pre.in, "input dataset directory")->required();
    sc_pre->add_option("--out", pre.out, "output dataset directory")->required();
    sc_pre->add_option("--radii", pre.radii, "structuring-element radii (strictly increasing)")
        ->delimiter(',')
        ->capture_default_str();
    sc_pre->add_option("--width", pre.width, "target width (0 keeps extents)")->capture_default_str();
    sc_pre->add_option("--height", pre.height, "target height (0 keeps extents)")->capture_default_str();

    TrainArgs tr;
    auto* sc_train = app.add_subcommand("train", "train a model from a JSON run config");
    sc_train->add_option("--config", tr.config, "run config JSON file")->required();
    sc_train->add_option("--data", tr.data, "dataset directory (overrides config data_dir)");
    sc_train->add_option("--out", tr.out, "output directory (overrides config out_dir)");
    sc_train->add_option("--resume", tr.resume, "checkpoint to resume from");
    sc_train->add_option("--loss", tr.loss, "loss variant: squared-dice | eq1-verbatim");

    EvalArgs ev;
    auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    sc_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    sc_eval->add_option("--data", ev.data, "dataset directory")->required();
    sc_eval->add_option("--split", ev.split, "train | val | test")->capture_default_str();
    sc_eval->add_option("--csv", ev.csv, "write macro + per-class metrics CSV here");
    sc_eval->add_flag("--oracle", ev.oracle, "score the ground truth against itself");

    PredictArgs pr;
    auto* sc_pred = app.add_subcommand("predict", "predict a mask for one PGM image");
    sc_pred->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
    sc_pred->add_option("--image", pr.image, "input PGM image")->required();
    sc_pred->add_option("--out", pr.out, "output mask PGM")->required();
    sc_pred->add_option("--overlay", pr.overlay, "optional overlay PGM with per-class gray levels");

    GradcheckArgs gc;
    auto* sc_gc = app.add_subcommand("gradcheck", "finite-difference audit of every backward rule");
    sc_gc->add_option("--seed", gc.seed, "base seed")->capture_default_str();
    sc_gc->add_option("--seeds", gc.seeds, "number of seeds to sweep")->capture_default_str();
    sc_gc->add_flag("--canary", gc.canary, "deliberately break one backward rule (self-test)")->group("");

    AblationArgs ab;
    auto* sc_ab = app.add_subcommand("ablation", "train and score variations A-D and the full model");
    sc_ab->add_option("--config", ab.config, "base run config JSON file")->required();
    sc_ab->add_option("--data", ab.data, "dataset directory")->required();
    sc_ab->add_option("--out", ab.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "teethseg: error: " << one_line(e.what()) << "\n";
        return kExitUsage;
    }

    try {
        if (app.got_subcommand(sc_gen)) return cmd_generate(gen);
        if (app.got_subcommand(sc_pre)) return cmd_preprocess(pre);
        if (app.got_subcommand(sc_train)) return cmd_train(tr);
        if (app.got_subcommand(sc_eval)) return cmd_eval(ev);
        if (app.got_subcommand(sc_pred)) return cmd_predict(pr);
        if (app.got_subcommand(sc_gc)) return cmd_gradcheck(gc);
        if (app.got_subcommand(sc_ab)) return cmd_ablation(ab);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "teethseg: error: " << one_line(e.what()) << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "teethseg: error: " << one_line(e.what()) << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "teethseg: error: " << one_line(e.what()) << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
