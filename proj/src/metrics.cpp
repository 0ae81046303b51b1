#include "teethseg/metrics.hpp"

#include <string>

#include "teethseg/tensor.hpp"

namespace teethseg {

void ConfusionCounts::add(const ConfusionCounts& other) {
    if (other.num_classes != num_classes) fail("confusion: class-count mismatch in merge");
    for (std::size_t c = 0; c < tp.size(); ++c) {
        tp[c] += other.tp[c];
        tn[c] += other.tn[c];
        fp[c] += other.fp[c];
        fn[c] += other.fn[c];
    }
}

std::int64_t ConfusionCounts::total_pixels() const {
    return num_classes ? tp[0] + tn[0] + fp[0] + fn[0] : 0;
}

ConfusionCounts confusion_counts(const LabelMask& pred, const LabelMask& truth, int num_classes) {
    if (pred.width != truth.width || pred.height != truth.height)
        fail("confusion_counts: grid extents differ (" + std::to_string(pred.width) + "x" +
             std::to_string(pred.height) + " vs " + std::to_string(truth.width) + "x" +
             std::to_string(truth.height) + ")");
    ConfusionCounts cc(num_classes);
    const std::int64_t total = static_cast<std::int64_t>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred.v[i], t = truth.v[i];
        if (p >= num_classes)
            fail("confusion_counts: prediction label " + std::to_string(p) + " at pixel " +
                 std::to_string(i) + " outside codebook (0.." + std::to_string(num_classes - 1) + ")");
        if (t >= num_classes)
            fail("confusion_counts: truth label " + std::to_string(t) + " at pixel " + std::to_string(i) +
                 " outside codebook (0.." + std::to_string(num_classes - 1) + ")");
        if (p == t) {
            ++cc.tp[static_cast<std::size_t>(p)];
        } else {
            ++cc.fp[static_cast<std::size_t>(p)];
            ++cc.fn[static_cast<std::size_t>(t)];
        }
    }
    for (int c = 0; c < num_classes; ++c) {
        const std::size_t s = static_cast<std::size_t>(c);
        cc.tn[s] = total - cc.tp[s] - cc.fp[s] - cc.fn[s];
    }
    return cc;
}

namespace {
double ratio(std::int64_t num, std::int64_t den, bool absent_both) {
    if (den > 0) return static_cast<double>(num) / static_cast<double>(den);
    return absent_both ? 1.0 : 0.0;
}
}  // namespace

MetricReport metrics_from_counts(const ConfusionCounts& cc) {
    MetricReport r;
    r.per_class.resize(static_cast<std::size_t>(cc.num_classes));
    r.present.resize(static_cast<std::size_t>(cc.num_classes));
    for (int c = 0; c < cc.num_classes; ++c) {
        const std::size_t s = static_cast<std::size_t>(c);
        const std::int64_t tp = cc.tp[s], tn = cc.tn[s], fp = cc.fp[s], fn = cc.fn[s];
        const bool absent_both = (tp + fp == 0) && (tp + fn == 0);
        ClassMetrics& m = r.per_class[s];
        m.acc = ratio(tp + tn, tp + fp + fn + tn, absent_both);
        m.precision = ratio(tp, tp + fp, absent_both);
        m.recall = ratio(tp, tp + fn, absent_both);
        m.specificity = ratio(tn, tn + fp, absent_both);
        m.ji = ratio(tp, tp + fp + fn, absent_both);
        m.dsc = ratio(2 * tp, 2 * tp + fp + fn, absent_both);
        r.present[s] = (tp + fn) > 0;
    }
    int n = 0;
    for (int c = 1; c < cc.num_classes; ++c) {
        if (!r.present[static_cast<std::size_t>(c)]) continue;
        const ClassMetrics& m = r.per_class[static_cast<std::size_t>(c)];
        r.macro.acc += m.acc;
        r.macro.dsc += m.dsc;
        r.macro.ji += m.ji;
        r.macro.precision += m.precision;
        r.macro.recall += m.recall;
        r.macro.specificity += m.specificity;
        ++n;
    }
    if (n > 0) {
        const double inv = 1.0 / n;
        r.macro.acc *= inv;
        r.macro.dsc *= inv;
        r.macro.ji *= inv;
        r.macro.precision *= inv;
        r.macro.recall *= inv;
        r.macro.specificity *= inv;
    }
    return r;
}

}  // namespace teethseg
