#pragma once

#include <cstdint>
#include <vector>

#include "teethseg/image.hpp"

namespace teethseg {

// One-vs-rest pixel tallies per class. For every class,
// tp+tn+fp+fn equals the total pixel count.
struct ConfusionCounts {
    int num_classes = 0;
    std::vector<std::int64_t> tp, tn, fp, fn;

    explicit ConfusionCounts(int classes = 0)
        : num_classes(classes),
          tp(static_cast<std::size_t>(classes), 0),
          tn(static_cast<std::size_t>(classes), 0),
          fp(static_cast<std::size_t>(classes), 0),
          fn(static_cast<std::size_t>(classes), 0) {}

    // associative merge across images
    void add(const ConfusionCounts& other);
    std::int64_t total_pixels() const;
};

struct ClassMetrics {
    double acc = 0, dsc = 0, ji = 0, precision = 0, recall = 0, specificity = 0;
};

struct MetricReport {
    std::vector<ClassMetrics> per_class;
    std::vector<bool> present;  // class has ground-truth support
    ClassMetrics macro;         // over present classes, background excluded
};

ConfusionCounts confusion_counts(const LabelMask& pred, const LabelMask& truth, int num_classes);

// Eq.-style ratios per class with the zero-denominator convention: a zero
// denominator yields 1 when the class is absent from both prediction and
// truth, 0 otherwise.
MetricReport metrics_from_counts(const ConfusionCounts& counts);

}  // namespace teethseg
