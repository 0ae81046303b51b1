#include "teethseg/runconfig.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace teethseg {

namespace {
using nlohmann::json;

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> kKeys = {
        "depth",       "base_width",   "num_classes", "use_deep_supervision",
        "use_swin",    "use_tab",      "swin_window", "dropout_p",
        "input_width", "input_height", "in_channels", "epochs",
        "batch",       "seed",         "lr",          "loss_eps",
        "loss",        "radii",        "data_dir",    "out_dir"};
    return kKeys;
}
}  // namespace

TrainOptions RunConfig::train_options() const {
    TrainOptions t;
    t.epochs = epochs;
    t.batch = batch;
    t.seed = seed;
    t.lr = lr;
    t.loss_eps = loss_eps;
    t.loss_variant = loss_variant();
    return t;
}

LossVariant RunConfig::loss_variant() const {
    return loss == "eq1-verbatim" ? LossVariant::kEq1Verbatim : LossVariant::kSquaredDice;
}

std::string run_config_to_json(const RunConfig& rc) {
    json j;
    j["depth"] = rc.model.depth;
    j["base_width"] = rc.model.base_width;
    j["num_classes"] = rc.model.num_classes;
    j["use_deep_supervision"] = rc.model.use_deep_supervision;
    j["use_swin"] = rc.model.use_swin;
    j["use_tab"] = rc.model.use_tab;
    j["swin_window"] = rc.model.swin_window;
    j["dropout_p"] = rc.model.dropout_p;
    j["input_width"] = rc.model.input_width;
    j["input_height"] = rc.model.input_height;
    j["in_channels"] = rc.model.in_channels;
    j["epochs"] = rc.epochs;
    j["batch"] = rc.batch;
    j["seed"] = rc.seed;
    j["lr"] = rc.lr;
    j["loss_eps"] = rc.loss_eps;
    j["loss"] = rc.loss;
    j["radii"] = rc.radii;
    j["data_dir"] = rc.data_dir;
    j["out_dir"] = rc.out_dir;
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
    std::vector<std::string> problems;
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top-level value must be an object");

    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool known = false;
        for (const auto& k : known_keys())
            if (k == key) {
                known = true;
                break;
            }
        if (!known) problems.push_back("unknown key '" + key + "'");
    }

    RunConfig rc;
    auto get = [&](const char* key, auto& target) {
        if (!j.contains(key)) return;  // schema default stands
        try {
            target = j.at(key).get<std::decay_t<decltype(target)>>();
        } catch (const std::exception&) {
            problems.push_back(std::string("key '") + key + "' has the wrong type");
        }
    };
    get("depth", rc.model.depth);
    get("base_width", rc.model.base_width);
    get("num_classes", rc.model.num_classes);
    get("use_deep_supervision", rc.model.use_deep_supervision);
    get("use_swin", rc.model.use_swin);
    get("use_tab", rc.model.use_tab);
    get("swin_window", rc.model.swin_window);
    get("dropout_p", rc.model.dropout_p);
    get("input_width", rc.model.input_width);
    get("input_height", rc.model.input_height);
    get("in_channels", rc.model.in_channels);
    get("epochs", rc.epochs);
    get("batch", rc.batch);
    get("seed", rc.seed);
    get("lr", rc.lr);
    get("loss_eps", rc.loss_eps);
    get("loss", rc.loss);
    get("radii", rc.radii);
    get("data_dir", rc.data_dir);
    get("out_dir", rc.out_dir);

    if (rc.loss != "squared-dice" && rc.loss != "eq1-verbatim")
        problems.push_back("key 'loss' must be 'squared-dice' or 'eq1-verbatim', got '" + rc.loss + "'");
    if (rc.epochs < 0) problems.push_back("key 'epochs' must be >= 0");
    if (rc.batch < 1) problems.push_back("key 'batch' must be >= 1");
    if (rc.lr <= 0) problems.push_back("key 'lr' must be > 0");
    if (rc.loss_eps <= 0) problems.push_back("key 'loss_eps' must be > 0");
    if (problems.empty()) {
        try {
            rc.model.validate();
        } catch (const std::exception& e) {
            problems.push_back(e.what());
        }
    }

    if (!problems.empty()) {
        std::string msg = "config: " + std::to_string(problems.size()) + " problem(s):";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw std::invalid_argument(msg);
    }
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return run_config_from_json(text);
}

void save_run_config(const std::string& path, const RunConfig& rc) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot write '" + path + "'");
    f << run_config_to_json(rc) << '\n';
}

}  // namespace teethseg
