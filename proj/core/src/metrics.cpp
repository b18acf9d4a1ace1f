#include "fedfdia/metrics.hpp"

namespace fedfdia::metrics {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
}

namespace {

void check_shapes(const Matrix& probs, const Matrix& labels) {
    if (probs.rows() != labels.rows() || probs.cols() != labels.cols()) {
        throw DimensionError("metrics: prediction and label shapes differ");
    }
}

void tally(ConfusionCounts& c, bool predicted, bool actual) {
    if (predicted) {
        actual ? ++c.tp : ++c.fp;
    } else {
        actual ? ++c.fn : ++c.tn;
    }
}

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<ConfusionCounts> confusion_per_location(const Matrix& probs, const Matrix& labels, double threshold) {
    check_shapes(probs, labels);
    std::vector<ConfusionCounts> out(static_cast<std::size_t>(probs.cols()));
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
            tally(out[static_cast<std::size_t>(c)], probs(r, c) > threshold, labels(r, c) > 0.5);
        }
    }
    return out;
}

ConfusionCounts confusion(const Matrix& probs, const Matrix& labels, double threshold) {
    ConfusionCounts total;
    for (const auto& c : confusion_per_location(probs, labels, threshold)) {
        total += c;
    }
    return total;
}

double precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
double recall(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
double accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }

double f1(const ConfusionCounts& c) {
    const double p = precision(c);
    const double r = recall(c);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double subset_accuracy(const Matrix& probs, const Matrix& labels, double threshold) {
    check_shapes(probs, labels);
    if (probs.rows() == 0) {
        return 0.0;
    }
    std::uint64_t exact = 0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        bool ok = true;
        for (Eigen::Index c = 0; c < probs.cols() && ok; ++c) {
            ok = (probs(r, c) > threshold) == (labels(r, c) > 0.5);
        }
        exact += ok ? 1 : 0;
    }
    return ratio(exact, static_cast<std::uint64_t>(probs.rows()));
}

MetricReport report(const Matrix& probs, const Matrix& labels, double threshold, Averaging averaging) {
    MetricReport rep;
    rep.threshold = threshold;
    const auto per_loc = confusion_per_location(probs, labels, threshold);
    for (const auto& c : per_loc) {
        rep.counts += c;
    }
    if (averaging == Averaging::Micro || per_loc.empty()) {
        rep.accuracy = accuracy(rep.counts);
        rep.precision = precision(rep.counts);
        rep.recall = recall(rep.counts);
        rep.f1 = f1(rep.counts);
    } else {
        for (const auto& c : per_loc) {
            rep.accuracy += accuracy(c);
            rep.precision += precision(c);
            rep.recall += recall(c);
            rep.f1 += f1(c);
        }
        const auto n = static_cast<double>(per_loc.size());
        rep.accuracy /= n;
        rep.precision /= n;
        rep.recall /= n;
        rep.f1 /= n;
    }
    rep.subset_accuracy = subset_accuracy(probs, labels, threshold);
    return rep;
}

MetricReport average(const std::vector<MetricReport>& reports) {
    MetricReport out;
    if (reports.empty()) {
        return out;
    }
    out.threshold = reports.front().threshold;
    for (const auto& r : reports) {
        out.accuracy += r.accuracy;
        out.precision += r.precision;
        out.recall += r.recall;
        out.f1 += r.f1;
        out.subset_accuracy += r.subset_accuracy;
        out.counts += r.counts;
    }
    const auto n = static_cast<double>(reports.size());
    out.accuracy /= n;
    out.precision /= n;
    out.recall /= n;
    out.f1 /= n;
    out.subset_accuracy /= n;
    return out;
}

}  // namespace fedfdia::metrics
