#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "teethseg/dataset.hpp"
#include "teethseg/loss.hpp"
#include "teethseg/metrics.hpp"
#include "teethseg/ops.hpp"

using namespace teethseg;
using testutil::random_tensor;

namespace {

Tensor random_soft_pred(Shape s, Rng& rng) {
    Tensor logits = random_tensor(std::move(s), rng, -2.0, 2.0);
    return softmax(nullptr, logits, 1);
}

Tensor random_one_hot(Index n, Index c, Index h, Index w, Rng& rng) {
    Tensor t({n, c, h, w});
    for (Index i = 0; i < n; ++i)
        for (Index p = 0; p < h * w; ++p) t[(i * c + rng.uniform_index(c)) * h * w + p] = 1.0;
    return t;
}

// Independent per-class oracle: walks the grids once per class and metric,
// straight from the ratio definitions.
ClassMetrics oracle_class_metrics(const LabelMask& pred, const LabelMask& truth, int cls, bool& present) {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.v[i] == cls, t = truth.v[i] == cls;
        if (p && t)
            ++tp;
        else if (p && !t)
            ++fp;
        else if (!p && t)
            ++fn;
        else
            ++tn;
    }
    present = (tp + fn) > 0;
    const bool absent_both = (tp + fp == 0) && (tp + fn == 0);
    auto r = [&](double num, double den) { return den > 0 ? num / den : (absent_both ? 1.0 : 0.0); };
    ClassMetrics m;
    m.acc = r(static_cast<double>(tp + tn), static_cast<double>(tp + fp + fn + tn));
    m.precision = r(static_cast<double>(tp), static_cast<double>(tp + fp));
    m.recall = r(static_cast<double>(tp), static_cast<double>(tp + fn));
    m.specificity = r(static_cast<double>(tn), static_cast<double>(tn + fp));
    m.ji = r(static_cast<double>(tp), static_cast<double>(tp + fp + fn));
    m.dsc = r(static_cast<double>(2 * tp), static_cast<double>(2 * tp + fp + fn));
    return m;
}

}  // namespace

TEST_CASE("dice loss is zero on perfect overlap") {
    Rng rng(1);
    Tensor y_t = random_one_hot(1, 4, 3, 3, rng);
    Tensor l = squared_dice_loss(nullptr, y_t, y_t, 1e-6);
    CHECK(l[0] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("dice loss on disjoint hard predictions approaches 1") {
    const Index n = 6;  // pixels
    Tensor y_t({1, 3, 1, n}), y_p({1, 3, 1, n});
    for (Index p = 0; p < n; ++p) {
        y_t[1 * n + p] = 1.0;  // class 1
        y_p[2 * n + p] = 1.0;  // class 2
    }
    const double eps = 1e-6;
    Tensor l = squared_dice_loss(nullptr, y_p, y_t, eps);
    const double expect = 1.0 - eps / (2.0 * n + eps);
    CHECK(l[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("dice loss single-pixel hand example") {
    Tensor y_t({1, 2, 1, 1}, std::vector<double>{1.0, 0.0});
    Tensor y_p({1, 2, 1, 1}, std::vector<double>{0.5, 0.5});
    Tensor l = squared_dice_loss(nullptr, y_p, y_t, 1e-6);
    const double expect = 1.0 - (1.0 + 1e-6) / (1.5 + 1e-6);
    CHECK(std::abs(l[0] - expect) < 1e-9);
    CHECK(std::abs(l[0] - 0.333333) < 1e-6);
}

TEST_CASE("dice loss rejections") {
    Tensor a({1, 2, 1, 1}), b({1, 3, 1, 1});
    CHECK_THROWS_AS(squared_dice_loss(nullptr, a, b, 1e-6), std::invalid_argument);
    Tensor c({1, 2, 1, 1});
    CHECK_THROWS_AS(squared_dice_loss(nullptr, a, c, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(squared_dice_loss(nullptr, a, c, -1.0), std::invalid_argument);
}

TEST_CASE("dice loss stays in [0,1) and is zero only at equality") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor y_t = random_one_hot(1, 5, 4, 4, rng);
        Tensor y_p = random_soft_pred({1, 5, 4, 4}, rng);
        const double l = squared_dice_loss(nullptr, y_p, y_t, 1e-6)[0];
        CHECK(l >= 0.0);
        CHECK(l < 1.0);
        CHECK(l > 0.0);  // soft prediction never equals the one-hot target
    }
}

TEST_CASE("dice loss gradient matches finite differences") {
    Rng rng(11);
    Tensor logits = random_tensor({1, 4, 3, 3}, rng, -2.0, 2.0);
    Tensor y_t = random_one_hot(1, 4, 3, 3, rng);
    const double err = grad_check(
        [&](Tape& t, Tensor& v) { return squared_dice_loss(&t, softmax(&t, v, 1), y_t, 1e-6); }, logits, 1e-5);
    CHECK(err < 1e-5);
    const double err2 = grad_check(
        [&](Tape& t, Tensor& v) { return squared_dice_loss_eq1_verbatim(&t, softmax(&t, v, 1), y_t, 1e-6); },
        logits, 1e-5);
    CHECK(err2 < 1e-5);
}

TEST_CASE("eq1-verbatim variant is nonzero on perfect prediction") {
    Rng rng(13);
    Tensor y_t = random_one_hot(1, 4, 3, 3, rng);
    const double l = squared_dice_loss_eq1_verbatim(nullptr, y_t, y_t, 1e-6)[0];
    CHECK(l > 0.4);  // the printed form cannot reach 0
    CHECK(l < 1.0);
}

TEST_CASE("total loss reduces to the main loss when aux is empty") {
    Rng rng(17);
    ModelOutputs out;
    out.main = random_soft_pred({1, 4, 4, 4}, rng);
    Tensor y_t = random_one_hot(1, 4, 4, 4, rng);
    const double lt = total_loss(nullptr, out, y_t, 1e-6)[0];
    const double lm = squared_dice_loss(nullptr, out.main, y_t, 1e-6)[0];
    CHECK(lt == doctest::Approx(lm).epsilon(1e-15));
}

TEST_CASE("total loss is zero when every scale is perfect") {
    Rng rng(19);
    Tensor y_t = random_one_hot(1, 3, 8, 8, rng);
    ModelOutputs out;
    out.main = y_t;
    out.aux.push_back(downsample_target(y_t, 1));
    out.aux.push_back(downsample_target(y_t, 2));
    const double lt = total_loss(nullptr, out, y_t, 1e-6)[0];
    CHECK(lt == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("total loss weighted-sum arithmetic: 0.4 main + mean(0.3,0.3,0.3) = 0.7") {
    // engineered targets: per-scale predictions built to hit exact loss values
    // via L = 1 - (2I+eps)/(T+P+eps); verified against direct computation
    Rng rng(23);
    Tensor y_t = random_one_hot(1, 3, 8, 8, rng);
    ModelOutputs out;
    out.main = random_soft_pred({1, 3, 8, 8}, rng);
    out.aux.push_back(random_soft_pred({1, 3, 4, 4}, rng));
    out.aux.push_back(random_soft_pred({1, 3, 2, 2}, rng));
    out.aux.push_back(random_soft_pred({1, 3, 1, 1}, rng));
    const double lt = total_loss(nullptr, out, y_t, 1e-6)[0];
    const double lm = squared_dice_loss(nullptr, out.main, y_t, 1e-6)[0];
    double aux = 0.0;
    for (int i = 0; i < 3; ++i)
        aux += squared_dice_loss(nullptr, out.aux[static_cast<std::size_t>(i)], downsample_target(y_t, i + 1), 1e-6)[0];
    CHECK(lt == doctest::Approx(lm + aux / 3.0).epsilon(1e-12));

    // the spec's arithmetic example
    CHECK(0.4 + (0.3 + 0.3 + 0.3) / 3.0 == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("total loss rejects scale mismatches") {
    Rng rng(29);
    Tensor y_t = random_one_hot(1, 3, 8, 8, rng);
    ModelOutputs out;
    out.main = random_soft_pred({1, 3, 8, 8}, rng);
    out.aux.push_back(random_soft_pred({1, 3, 8, 8}, rng));  // should be 4x4
    CHECK_THROWS_AS(total_loss(nullptr, out, y_t, 1e-6), std::invalid_argument);
}

TEST_CASE("confusion counts: perfect prediction has no fp/fn") {
    Rng rng(31);
    LabelMask m(6, 5);
    for (auto& v : m.v) v = static_cast<std::uint8_t>(rng.uniform_index(4));
    ConfusionCounts cc = confusion_counts(m, m, 4);
    for (int c = 0; c < 4; ++c) {
        CHECK(cc.fp[static_cast<std::size_t>(c)] == 0);
        CHECK(cc.fn[static_cast<std::size_t>(c)] == 0);
    }
}

TEST_CASE("confusion counts manual 2x2 tally") {
    LabelMask truth(2, 2), pred(2, 2);
    truth.v = {1, 1, 2, 0};
    pred.v = {1, 2, 2, 0};
    ConfusionCounts cc = confusion_counts(pred, truth, 3);
    CHECK(cc.tp[1] == 1);
    CHECK(cc.fn[1] == 1);
    CHECK(cc.fp[1] == 0);
    CHECK(cc.tn[1] == 2);
    CHECK(cc.tp[2] == 1);
    CHECK(cc.fp[2] == 1);
    CHECK(cc.fn[2] == 0);
    CHECK(cc.tn[2] == 2);
    for (int c = 0; c < 3; ++c) {
        const std::size_t s = static_cast<std::size_t>(c);
        CHECK(cc.tp[s] + cc.tn[s] + cc.fp[s] + cc.fn[s] == 4);
    }
}

TEST_CASE("confusion counts reject out-of-codebook labels naming value and position") {
    LabelMask truth(2, 1), pred(2, 1);
    truth.v = {0, 7};
    pred.v = {0, 1};
    try {
        confusion_counts(pred, truth, 4);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find('7') != std::string::npos);
        CHECK(msg.find('1') != std::string::npos);  // pixel index
    }
}

TEST_CASE("metrics direct substitution examples") {
    ConfusionCounts cc(2);
    cc.tp[1] = 1;
    cc.fp[1] = 1;
    cc.fn[1] = 1;
    cc.tn[1] = 1;
    cc.tp[0] = 1;
    cc.fp[0] = 1;
    cc.fn[0] = 1;
    cc.tn[0] = 1;
    MetricReport r = metrics_from_counts(cc);
    const ClassMetrics& m = r.per_class[1];
    CHECK(m.acc == doctest::Approx(0.5));
    CHECK(m.precision == doctest::Approx(0.5));
    CHECK(m.recall == doctest::Approx(0.5));
    CHECK(m.specificity == doctest::Approx(0.5));
    CHECK(m.ji == doctest::Approx(1.0 / 3.0));
    CHECK(m.dsc == doctest::Approx(0.5));
}

TEST_CASE("metrics identity dsc/ji and perfect counts") {
    ConfusionCounts cc(2);
    cc.tp[1] = 3;
    cc.fp[1] = 1;
    cc.fn[1] = 2;
    cc.tn[1] = 10;
    cc.tp[0] = 10;
    cc.tn[0] = 6;
    MetricReport r = metrics_from_counts(cc);
    CHECK(r.per_class[1].dsc == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.per_class[1].ji == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.per_class[1].ji == doctest::Approx(r.per_class[1].dsc / (2.0 - r.per_class[1].dsc)).epsilon(1e-12));

    ConfusionCounts perfect(3);
    for (int c = 0; c < 3; ++c) {
        perfect.tp[static_cast<std::size_t>(c)] = 5;
        perfect.tn[static_cast<std::size_t>(c)] = 10;
    }
    MetricReport rp = metrics_from_counts(perfect);
    for (int c = 0; c < 3; ++c) {
        const ClassMetrics& m = rp.per_class[static_cast<std::size_t>(c)];
        CHECK(m.acc == 1.0);
        CHECK(m.dsc == 1.0);
        CHECK(m.ji == 1.0);
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.specificity == 1.0);
    }
    CHECK(rp.macro.dsc == 1.0);
}

TEST_CASE("metrics match the brute-force pixel oracle on 100 random grids") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        LabelMask truth(8, 8), pred(8, 8);
        for (auto& v : truth.v) v = static_cast<std::uint8_t>(rng.uniform_index(4));
        for (auto& v : pred.v) v = static_cast<std::uint8_t>(rng.uniform_index(4));
        const ConfusionCounts cc = confusion_counts(pred, truth, 4);
        const MetricReport r = metrics_from_counts(cc);
        for (int c = 0; c < 4; ++c) {
            bool present = false;
            const ClassMetrics om = oracle_class_metrics(pred, truth, c, present);
            const ClassMetrics& m = r.per_class[static_cast<std::size_t>(c)];
            CHECK(m.acc == om.acc);
            CHECK(m.dsc == om.dsc);
            CHECK(m.ji == om.ji);
            CHECK(m.precision == om.precision);
            CHECK(m.recall == om.recall);
            CHECK(m.specificity == om.specificity);
            CHECK(r.present[static_cast<std::size_t>(c)] == present);
            // JI = DSC/(2-DSC) identity whenever the union is non-empty
            const std::size_t s = static_cast<std::size_t>(c);
            if (cc.tp[s] + cc.fp[s] + cc.fn[s] > 0)
                CHECK(std::abs(m.ji - m.dsc / (2.0 - m.dsc)) < 1e-12);
            CHECK(m.ji <= m.dsc + 1e-15);
        }
    }
}

TEST_CASE("zero-denominator conventions") {
    // class 2 absent from both prediction and truth -> convention value 1
    ConfusionCounts cc(3);
    cc.tp[0] = 4;
    cc.tn[0] = 0;
    cc.tn[1] = 4;
    cc.tn[2] = 4;
    MetricReport r = metrics_from_counts(cc);
    CHECK(r.per_class[2].precision == 1.0);
    CHECK(r.per_class[2].recall == 1.0);
    CHECK(r.per_class[2].dsc == 1.0);
    CHECK(r.per_class[2].ji == 1.0);

    // class present in truth but never predicted -> 0 for tp-based ratios
    ConfusionCounts cc2(2);
    cc2.fn[1] = 4;
    cc2.tp[0] = 0;
    cc2.fp[0] = 4;
    MetricReport r2 = metrics_from_counts(cc2);
    CHECK(r2.per_class[1].precision == 0.0);
    CHECK(r2.per_class[1].recall == 0.0);
    CHECK(r2.per_class[1].dsc == 0.0);
}

TEST_CASE("macro average excludes background and absent classes") {
    ConfusionCounts cc(3);
    // class 1 present and perfectly predicted; class 2 absent everywhere
    cc.tp[1] = 4;
    cc.tn[1] = 12;
    cc.tn[2] = 16;
    cc.tp[0] = 12;
    cc.tn[0] = 4;
    MetricReport r = metrics_from_counts(cc);
    CHECK(r.present[1]);
    CHECK_FALSE(r.present[2]);
    CHECK(r.macro.dsc == 1.0);  // only class 1 participates
}
