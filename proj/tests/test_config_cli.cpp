#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "teethseg/pgm.hpp"
#include "teethseg/runconfig.hpp"

using namespace teethseg;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = std::string(TEETHSEG_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    CmdResult r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::size_t n = 0;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
    const int status = pclose(p);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string tree_digest(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    std::string digest;
    for (const auto& p : paths) digest += fs::path(p).filename().string() + ":" + file_bytes(p) + "\n";
    return digest;
}

std::string write_tiny_config(const std::string& dir, int epochs) {
    RunConfig rc;
    rc.model.depth = 2;
    rc.model.base_width = 4;
    rc.model.input_width = 16;
    rc.model.input_height = 16;
    rc.epochs = epochs;
    rc.batch = 2;
    rc.seed = 3;
    rc.lr = 1e-3;
    const std::string path = dir + "/config.json";
    save_run_config(path, rc);
    return path;
}

}  // namespace

TEST_CASE("run config schema defaults match the documented defaults") {
    const RunConfig rc = run_config_from_json("{}");
    CHECK(rc.model.depth == 4);
    CHECK(rc.model.base_width == 8);
    CHECK(rc.model.num_classes == 33);
    CHECK(rc.model.use_deep_supervision);
    CHECK(rc.model.use_swin);
    CHECK(rc.model.use_tab);
    CHECK(rc.model.swin_window == 2);
    CHECK(rc.model.dropout_p == 0.1);
    CHECK(rc.model.input_width == 128);
    CHECK(rc.model.input_height == 64);
    CHECK(rc.epochs == 50);
    CHECK(rc.batch == 2);
    CHECK(rc.seed == 1);
    CHECK(rc.lr == 1e-4);
    CHECK(rc.loss_eps == 1e-6);
    CHECK(rc.loss == "squared-dice");
    CHECK(rc.radii == std::vector<int>{1, 2, 3});
}

TEST_CASE("run config roundtrip is stable") {
    RunConfig rc;
    rc.model.depth = 3;
    rc.model.input_width = 64;
    rc.model.input_height = 32;
    rc.epochs = 7;
    rc.loss = "eq1-verbatim";
    const std::string j1 = run_config_to_json(rc);
    const RunConfig back = run_config_from_json(j1);
    const std::string j2 = run_config_to_json(back);
    CHECK(j1 == j2);
    CHECK(back.loss_variant() == LossVariant::kEq1Verbatim);
}

TEST_CASE("run config rejects unknown keys and lists every violation at once") {
    try {
        run_config_from_json(R"({"depht": 4, "epochs": -1, "loss": "focal"})");
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("depht") != std::string::npos);
        CHECK(msg.find("epochs") != std::string::npos);
        CHECK(msg.find("focal") != std::string::npos);
        CHECK(msg.find("3 problem") != std::string::npos);
    }
}

TEST_CASE("cli: no subcommand or bad flag is a usage error (exit 2)") {
    CHECK(run_cli("").exit_code == 2);
    CHECK(run_cli("generate --bogus x").exit_code == 2);
    const CmdResult help = run_cli("--help");
    CHECK(help.exit_code == 0);
    for (const char* sub : {"generate", "preprocess", "train", "eval", "predict", "gradcheck", "ablation"})
        CHECK(help.output.find(sub) != std::string::npos);
}

TEST_CASE("cli: help enumerates flags with defaults") {
    const CmdResult g = run_cli("generate --help");
    CHECK(g.exit_code == 0);
    CHECK(g.output.find("--count") != std::string::npos);
    CHECK(g.output.find("64") != std::string::npos);   // count default
    CHECK(g.output.find("128") != std::string::npos);  // width default
    const CmdResult gc = run_cli("gradcheck --help");
    CHECK(gc.output.find("--seeds") != std::string::npos);
    CHECK(gc.output.find("5") != std::string::npos);
    const CmdResult pre = run_cli("preprocess --help");
    CHECK(pre.output.find("--radii") != std::string::npos);
}

TEST_CASE("cli generate: determinism, count 0 usage error, force flag") {
    const std::string d1 = testutil::temp_dir("cli_gen1");
    const std::string d2 = testutil::temp_dir("cli_gen2");
    CHECK(run_cli("generate --out " + d1 + " --count 8 --seed 1 --width 32 --height 16").exit_code == 0);
    CHECK(run_cli("generate --out " + d2 + " --count 8 --seed 1 --width 32 --height 16").exit_code == 0);
    CHECK(fs::exists(d1 + "/split.json"));
    int images = 0;
    for (const auto& e : fs::directory_iterator(d1 + "/images")) (void)e, ++images;
    CHECK(images == 8);
    CHECK(tree_digest(d1) == tree_digest(d2));

    CHECK(run_cli("generate --out " + d1 + " --count 8 --seed 1").exit_code == 2);  // non-empty, no --force
    CHECK(run_cli("generate --out " + d1 + " --count 8 --seed 2 --width 32 --height 16 --force").exit_code == 0);
    const CmdResult zero = run_cli("generate --out " + testutil::temp_dir("cli_gen0") + " --count 0");
    CHECK(zero.exit_code == 2);
    CHECK(zero.output.find("teethseg: error:") != std::string::npos);
}

TEST_CASE("cli preprocess: determinism and bounded intensities") {
    const std::string data = testutil::temp_dir("cli_pre_in");
    REQUIRE(run_cli("generate --out " + data + " --count 6 --seed 4 --width 32 --height 16").exit_code == 0);
    const std::string o1 = testutil::temp_dir("cli_pre_out1");
    const std::string o2 = testutil::temp_dir("cli_pre_out2");
    CHECK(run_cli("preprocess --in " + data + " --out " + o1).exit_code == 0);
    CHECK(run_cli("preprocess --in " + data + " --out " + o2).exit_code == 0);
    CHECK(tree_digest(o1) == tree_digest(o2));
    // 8-bit PGM payloads are within [0,255] by construction; check masks survived
    CHECK(fs::exists(o1 + "/masks"));
    CHECK(fs::exists(o1 + "/split.json"));
}

TEST_CASE("cli train: fixture run, unknown config key, resume equivalence") {
    const std::string base = testutil::temp_dir("cli_train");
    const std::string data = base + "/data";
    REQUIRE(run_cli("generate --out " + data + " --count 6 --seed 5 --width 16 --height 16").exit_code == 0);
    const std::string config = write_tiny_config(base, 2);

    const CmdResult tr = run_cli("train --config " + config + " --data " + data + " --out " + base + "/run1");
    CHECK(tr.exit_code == 0);
    CHECK(tr.output.find("val_dsc") != std::string::npos);
    CHECK(fs::exists(base + "/run1/checkpoint_last.ckpt"));
    CHECK(fs::exists(base + "/run1/train_log.csv"));

    // unknown key -> exit 2 naming the key
    {
        std::ofstream f(base + "/bad.json");
        f << R"({"depth": 2, "unknown_knob": 1})";
    }
    const CmdResult bad = run_cli("train --config " + base + "/bad.json --data " + data + " --out " + base + "/runx");
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("unknown_knob") != std::string::npos);

    // resume reproduces the uninterrupted run
    const std::string config4 = [&] {
        RunConfig rc;
        rc.model.depth = 2;
        rc.model.base_width = 4;
        rc.model.input_width = 16;
        rc.model.input_height = 16;
        rc.epochs = 4;
        rc.batch = 2;
        rc.seed = 3;
        rc.lr = 1e-3;
        const std::string p = base + "/config4.json";
        save_run_config(p, rc);
        return p;
    }();
    REQUIRE(run_cli("train --config " + config4 + " --data " + data + " --out " + base + "/full").exit_code == 0);
    REQUIRE(run_cli("train --config " + config + " --data " + data + " --out " + base + "/part").exit_code == 0);
    REQUIRE(run_cli("train --config " + config4 + " --data " + data + " --out " + base + "/cont --resume " +
                    base + "/part/checkpoint_last.ckpt")
                .exit_code == 0);
    CHECK(file_bytes(base + "/full/checkpoint_last.ckpt") == file_bytes(base + "/cont/checkpoint_last.ckpt"));
}

TEST_CASE("cli eval: oracle row of ones, 33 class rows, deterministic bytes") {
    const std::string base = testutil::temp_dir("cli_eval");
    const std::string data = base + "/data";
    REQUIRE(run_cli("generate --out " + data + " --count 6 --seed 6 --width 16 --height 16").exit_code == 0);
    const std::string config = write_tiny_config(base, 1);
    REQUIRE(run_cli("train --config " + config + " --data " + data + " --out " + base + "/run").exit_code == 0);
    const std::string ckpt = base + "/run/checkpoint_last.ckpt";

    const CmdResult oracle = run_cli("eval --checkpoint " + ckpt + " --data " + data +
                                     " --split train --oracle --csv " + base + "/oracle.csv");
    CHECK(oracle.exit_code == 0);
    CHECK(oracle.output.find("ORACLE,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000") != std::string::npos);

    REQUIRE(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --split val --csv " + base + "/a.csv")
                .exit_code == 0);
    REQUIRE(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --split val --csv " + base + "/b.csv")
                .exit_code == 0);
    CHECK(file_bytes(base + "/a.csv") == file_bytes(base + "/b.csv"));

    std::ifstream f(base + "/a.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "model,acc,dsc,ji,precision,recall,specificity");
    int class_rows = 0;
    std::getline(f, line);  // macro row
    while (std::getline(f, line)) ++class_rows;
    CHECK(class_rows == 33);
}

TEST_CASE("cli predict: mask labels in codebook, deterministic, extent mismatch rejected") {
    const std::string base = testutil::temp_dir("cli_pred");
    const std::string data = base + "/data";
    REQUIRE(run_cli("generate --out " + data + " --count 6 --seed 7 --width 16 --height 16").exit_code == 0);
    const std::string config = write_tiny_config(base, 1);
    REQUIRE(run_cli("train --config " + config + " --data " + data + " --out " + base + "/run").exit_code == 0);
    const std::string ckpt = base + "/run/checkpoint_last.ckpt";
    const std::string image = data + "/images/sample_0000.pgm";

    CHECK(run_cli("predict --checkpoint " + ckpt + " --image " + image + " --out " + base + "/m1.pgm" +
                  " --overlay " + base + "/ov.pgm")
              .exit_code == 0);
    CHECK(run_cli("predict --checkpoint " + ckpt + " --image " + image + " --out " + base + "/m2.pgm")
              .exit_code == 0);
    CHECK(file_bytes(base + "/m1.pgm") == file_bytes(base + "/m2.pgm"));
    CHECK(fs::exists(base + "/ov.pgm"));
    const LabelMask m = read_pgm_mask(base + "/m1.pgm");
    for (auto v : m.v) CHECK(v <= 32);

    const std::string wide = testutil::temp_dir("cli_pred_wide");
    REQUIRE(run_cli("generate --out " + wide + " --count 3 --seed 8 --width 32 --height 16").exit_code == 0);
    CHECK(run_cli("predict --checkpoint " + ckpt + " --image " + wide + "/images/sample_0000.pgm --out " +
                  base + "/bad.pgm")
              .exit_code == 2);
}

TEST_CASE("cli gradcheck: quick seed passes, canary trips it") {
    const CmdResult ok = run_cli("gradcheck --seed 3 --seeds 1");
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("all passed") != std::string::npos);
    CHECK(ok.output.find("tiny_model.x") != std::string::npos);

    const CmdResult bad = run_cli("gradcheck --seed 3 --seeds 1 --canary");
    CHECK(bad.exit_code != 0);
    CHECK(bad.output.find("FAIL") != std::string::npos);
}

TEST_CASE("cli ablation: five rows in table order, metrics within [0,1]") {
    const std::string base = testutil::temp_dir("cli_abl");
    const std::string data = base + "/data";
    REQUIRE(run_cli("generate --out " + data + " --count 8 --seed 9 --width 16 --height 16").exit_code == 0);
    const std::string config = write_tiny_config(base, 1);
    const CmdResult ab = run_cli("ablation --config " + config + " --data " + data + " --out " + base + "/abl");
    CHECK(ab.exit_code == 0);

    std::ifstream f(base + "/abl/ablation.csv");
    REQUIRE(f);
    std::string line;
    std::getline(f, line);
    CHECK(line == "model,acc,dsc,ji,precision,recall,specificity");
    const std::vector<std::string> want = {"VARIATION A", "VARIATION B", "VARIATION C", "VARIATION D",
                                           "PROPOSED"};
    for (const auto& label : want) {
        REQUIRE(std::getline(f, line));
        CHECK(line.rfind(label + ",", 0) == 0);
        // six metric fields, each within [0,1]
        std::size_t pos = label.size() + 1;
        int fields = 0;
        while (pos < line.size()) {
            const std::size_t comma = line.find(',', pos);
            const std::string tok = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            const double v = std::stod(tok);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            ++fields;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        CHECK(fields == 6);
    }
    CHECK_FALSE(std::getline(f, line));  // exactly 5 rows
}
