#pragma once

#include <cstdint>
#include <vector>

#include "fedfdia/common.hpp"

namespace fedfdia::metrics {

/// Micro-aggregated counts over sample x location cells.
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

/// Cell-wise comparison of (prob > threshold) against the 0/1 label.
ConfusionCounts confusion(const Matrix& probs, const Matrix& labels, double threshold = 0.5);

/// One ConfusionCounts per output column.
std::vector<ConfusionCounts> confusion_per_location(const Matrix& probs, const Matrix& labels,
                                                    double threshold = 0.5);

// Degenerate denominators yield 0.
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);
double accuracy(const ConfusionCounts& c);

/// Fraction of samples whose whole label row is predicted exactly.
double subset_accuracy(const Matrix& probs, const Matrix& labels, double threshold = 0.5);

struct MetricReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double subset_accuracy = 0.0;
    double threshold = 0.5;
    ConfusionCounts counts;
};

enum class Averaging { Micro, Macro };

/// Micro: metrics from the pooled counts. Macro: per-location metrics averaged.
MetricReport report(const Matrix& probs, const Matrix& labels, double threshold = 0.5,
                    Averaging averaging = Averaging::Micro);

/// Element-wise mean of reports (counts are summed).
MetricReport average(const std::vector<MetricReport>& reports);

}  // namespace fedfdia::metrics
