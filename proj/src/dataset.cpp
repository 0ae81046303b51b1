#include "teethseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "teethseg/pgm.hpp"

namespace fs = std::filesystem;

namespace teethseg {

namespace codebook {

const std::vector<int>& fdi_numbers() {
    static const std::vector<int> kFdi = [] {
        std::vector<int> v;
        for (int q : {10, 20, 30, 40})
            for (int p = 1; p <= 8; ++p) v.push_back(q + p);
        return v;
    }();
    return kFdi;
}

int index_of_fdi(int fdi) {
    const int q = fdi / 10, p = fdi % 10;
    if (q < 1 || q > 4 || p < 1 || p > 8) fail("codebook: invalid FDI number " + std::to_string(fdi));
    return (q - 1) * 8 + p;
}

int fdi_of_index(int index) {
    if (index < 1 || index > 32) fail("codebook: class index " + std::to_string(index) + " has no FDI number");
    return fdi_numbers()[static_cast<std::size_t>(index - 1)];
}

std::string class_label(int index) {
    if (index == 0) return "background";
    return "fdi_" + std::to_string(fdi_of_index(index));
}

}  // namespace codebook

namespace {

// Smooth value-noise background in [lo, hi]: coarse random grid, bilinear.
void add_background_texture(GrayImage& img, Rng& rng, double lo, double hi) {
    const int cell = 8;
    const int gw = img.width / cell + 2, gh = img.height / cell + 2;
    std::vector<double> grid(static_cast<std::size_t>(gw * gh));
    for (auto& g : grid) g = rng.uniform(lo, hi);
    for (int y = 0; y < img.height; ++y) {
        const double fy = static_cast<double>(y) / cell;
        const int y0 = static_cast<int>(fy);
        const double wy = fy - y0;
        for (int x = 0; x < img.width; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const int x0 = static_cast<int>(fx);
            const double wx = fx - x0;
            const double top = (1 - wx) * grid[static_cast<std::size_t>(y0 * gw + x0)] +
                               wx * grid[static_cast<std::size_t>(y0 * gw + x0 + 1)];
            const double bot = (1 - wx) * grid[static_cast<std::size_t>((y0 + 1) * gw + x0)] +
                               wx * grid[static_cast<std::size_t>((y0 + 1) * gw + x0 + 1)];
            img.at(x, y) += (1 - wy) * top + wy * bot;
        }
    }
}

struct Tooth {
    int class_index;
    double cx, cy, rx, ry, angle, intensity;
};

void draw_tooth(GrayImage& img, LabelMask& mask, const Tooth& t, Rng& rng) {
    const double ca = std::cos(t.angle), sa = std::sin(t.angle);
    const int x0 = std::max(0, static_cast<int>(std::floor(t.cx - t.rx - t.ry)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(t.cx + t.rx + t.ry)));
    const int y0 = std::max(0, static_cast<int>(std::floor(t.cy - t.rx - t.ry)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(t.cy + t.ry + t.rx)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - t.cx, dy = y - t.cy;
            const double u = (dx * ca + dy * sa) / t.rx;
            const double v = (-dx * sa + dy * ca) / t.ry;
            if (u * u + v * v > 1.0) continue;
            mask.at(x, y) = static_cast<std::uint8_t>(t.class_index);
            img.at(x, y) = t.intensity + rng.uniform(-8.0, 8.0);
        }
}

// Arch sequences left-to-right on the radiograph: quadrant 1 reversed then
// quadrant 2 (upper), quadrant 4 reversed then quadrant 3 (lower).
int arch_fdi(bool upper, int slot) {
    if (upper) return slot < 8 ? 18 - slot : 21 + (slot - 8);
    return slot < 8 ? 48 - slot : 31 + (slot - 8);
}

Sample generate_one(std::uint64_t seed, int index, int w, int h) {
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index) * 0xD1B54A32D192ED03ULL + 1);
    Sample s;
    s.image = GrayImage(w, h);
    s.mask = LabelMask(w, h);

    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%04d", index);
    s.id = buf;

    add_background_texture(s.image, rng, 15.0, 60.0);

    const double margin = w / 16.0;
    const double slot_w = (w - 2.0 * margin) / 16.0;
    for (int arc = 0; arc < 2; ++arc) {
        const bool upper = arc == 0;
        for (int slot = 0; slot < 16; ++slot) {
            if (rng.bernoulli(0.05)) continue;  // occasionally missing tooth
            const double t = (slot + 0.5) / 16.0;
            const double curve = 4.0 * (t - 0.5) * (t - 0.5);  // 0 center, 1 edges
            Tooth tooth;
            tooth.class_index = codebook::index_of_fdi(arch_fdi(upper, slot));
            tooth.cx = margin + (slot + 0.5) * slot_w + rng.uniform(-0.15, 0.15) * slot_w;
            const double base_y = upper ? 0.32 + 0.06 * curve : 0.68 - 0.06 * curve;
            tooth.cy = h * (base_y + rng.uniform(-0.02, 0.02));
            const double molar = 1.0 + 0.18 * curve;  // molars slightly wider
            tooth.rx = 0.52 * slot_w * molar * rng.uniform(0.9, 1.1);
            tooth.ry = 0.14 * h * rng.uniform(0.85, 1.15);
            tooth.angle = rng.uniform(-0.15, 0.15);
            tooth.intensity = rng.uniform(150.0, 215.0);
            draw_tooth(s.image, s.mask, tooth, rng);
        }
    }
    for (auto& p : s.image.v) p = std::clamp(p, 0.0, 255.0);
    return s;
}

nlohmann::json split_to_json(const SplitManifest& m) {
    nlohmann::json j;
    j["seed"] = m.seed;
    j["ratios"] = {0.70, 0.15, 0.15};
    j["train"] = m.train;
    j["val"] = m.val;
    j["test"] = m.test;
    return j;
}

}  // namespace

std::vector<Sample> generate_synthetic(int count, std::uint64_t seed, int w, int h) {
    if (count < 1) fail("generate_synthetic: count must be >= 1");
    if (w < 16 || h < 16) fail("generate_synthetic: extents must be at least 16x16, got " +
                               std::to_string(w) + "x" + std::to_string(h));
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(generate_one(seed, i, w, h));
    return out;
}

SplitManifest make_split(std::vector<std::string> ids, std::uint64_t seed) {
    if (ids.size() < 3) fail("make_split: need at least 3 ids, got " + std::to_string(ids.size()));
    Rng rng(seed);
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        const Index j = rng.uniform_index(static_cast<Index>(i + 1));
        std::swap(ids[i], ids[static_cast<std::size_t>(j)]);
    }
    const auto n = static_cast<double>(ids.size());
    const std::size_t n_train = static_cast<std::size_t>(std::llround(0.70 * n));
    const std::size_t n_val = static_cast<std::size_t>(std::llround(0.15 * n));
    SplitManifest m;
    m.seed = seed;
    m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return m;
}

void save_split(const std::string& dir, const SplitManifest& split) {
    std::ofstream f(dir + "/split.json");
    if (!f) throw std::runtime_error("dataset: cannot write " + dir + "/split.json");
    f << split_to_json(split).dump(2) << '\n';
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples, const SplitManifest& split) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    for (const auto& s : samples) {
        write_pgm((fs::path(dir) / "images" / (s.id + ".pgm")).string(), s.image);
        write_pgm((fs::path(dir) / "masks" / (s.id + ".pgm")).string(), s.mask);
    }
    save_split(dir, split);
}

SplitManifest load_split(const std::string& dir) {
    std::ifstream f(dir + "/split.json");
    if (!f) throw std::runtime_error("dataset: cannot open " + dir + "/split.json");
    nlohmann::json j;
    f >> j;
    SplitManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    return m;
}

Sample load_sample(const std::string& dir, const std::string& id) {
    Sample s;
    s.id = id;
    s.image = read_pgm_image((fs::path(dir) / "images" / (id + ".pgm")).string());
    s.mask = read_pgm_mask((fs::path(dir) / "masks" / (id + ".pgm")).string());
    if (s.image.width != s.mask.width || s.image.height != s.mask.height)
        fail("dataset: image and mask extents differ for sample '" + id + "'");
    return s;
}

const std::vector<std::string>& split_ids(const SplitManifest& split, const std::string& name) {
    if (name == "train") return split.train;
    if (name == "val") return split.val;
    if (name == "test") return split.test;
    fail("dataset: unknown split '" + name + "' (expected train|val|test)");
}

Tensor encode_one_hot(const LabelMask& mask, int num_classes) {
    const Index h = mask.height, w = mask.width;
    Tensor t({1, num_classes, h, w});
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            const int label = mask.at(static_cast<int>(x), static_cast<int>(y));
            if (label >= num_classes)
                fail("encode_one_hot: label " + std::to_string(label) + " at (" + std::to_string(x) + "," +
                     std::to_string(y) + ") out of range for " + std::to_string(num_classes) + " classes");
            t.at4(0, label, y, x) = 1.0;
        }
    return t;
}

LabelMask argmax_labels(const Tensor& probs) {
    if (probs.ndim() != 4 || probs.dim(0) != 1) fail("argmax_labels: expected (1,C,H,W), got " + shape_str(probs.shape));
    const Index c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    LabelMask m(static_cast<int>(w), static_cast<int>(h));
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            Index best = 0;
            double bv = probs.at4(0, 0, y, x);
            for (Index ch = 1; ch < c; ++ch) {
                const double v = probs.at4(0, ch, y, x);
                if (v > bv) {  // strict: first index wins ties
                    bv = v;
                    best = ch;
                }
            }
            m.at(static_cast<int>(x), static_cast<int>(y)) = static_cast<std::uint8_t>(best);
        }
    return m;
}

}  // namespace teethseg
