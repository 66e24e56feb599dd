#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskfuse/errors.hpp"
#include "maskfuse/labels.hpp"
#include "maskfuse/linalg.hpp"

namespace maskfuse {

struct ConfusionMatrix {
    // counts[true][predicted]
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

    std::int64_t total() const {
        std::int64_t n = 0;
        for (const auto& row : counts)
            for (auto v : row) n += v;
        return n;
    }

    std::int64_t row_sum(std::size_t t) const {
        return std::accumulate(counts[t].begin(), counts[t].end(), std::int64_t{0});
    }

    std::int64_t col_sum(std::size_t p) const {
        std::int64_t n = 0;
        for (std::size_t t = 0; t < kNumClasses; ++t) n += counts[t][p];
        return n;
    }
};

struct MetricsReport {
    double auc = 0.0;
    double gmean = 0.0;
    double f1 = 0.0;
    double acc = 0.0;
    ConfusionMatrix confusion;
    std::array<double, kNumClasses> recall{};
    std::array<double, kNumClasses> precision{};
};

inline ConfusionMatrix confusion(std::span<const ClassLabel> y_true,
                                 std::span<const ClassLabel> y_pred) {
    if (y_true.size() != y_pred.size()) {
        throw ShapeError("confusion: y_true and y_pred differ in length");
    }
    if (y_true.empty()) {
        throw DataError("confusion: empty input");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        ++cm.counts[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
    }
    return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n < 1) {
        throw DataError("accuracy: empty confusion matrix");
    }
    std::int64_t trace = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) trace += cm.counts[c][c];
    return static_cast<double>(trace) / static_cast<double>(n);
}

inline std::array<double, kNumClasses> per_class_recall(const ConfusionMatrix& cm) {
    std::array<double, kNumClasses> recall{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const std::int64_t support = cm.row_sum(c);
        recall[c] = support > 0 ? static_cast<double>(cm.counts[c][c]) / static_cast<double>(support)
                                : 0.0;
    }
    return recall;
}

inline std::array<double, kNumClasses> per_class_precision(const ConfusionMatrix& cm) {
    std::array<double, kNumClasses> precision{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const std::int64_t predicted = cm.col_sum(c);
        precision[c] =
            predicted > 0 ? static_cast<double>(cm.counts[c][c]) / static_cast<double>(predicted)
                          : 0.0;
    }
    return precision;
}

/// Macro F1: unweighted mean over classes of 2PR/(P+R), with F1_c = 0 when
/// P + R = 0.
inline double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() < 1) {
        throw DataError("macro_f1: empty confusion matrix");
    }
    const auto recall = per_class_recall(cm);
    const auto precision = per_class_precision(cm);
    double sum = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double pr = precision[c] + recall[c];
        sum += pr > 0.0 ? 2.0 * precision[c] * recall[c] / pr : 0.0;
    }
    return sum / static_cast<double>(kNumClasses);
}

/// Geometric mean of the three per-class recalls. A class with no true
/// samples has no recall, so that is an error rather than a silent zero.
inline double gmean(const ConfusionMatrix& cm) {
    double product = 1.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (cm.row_sum(c) < 1) {
            throw DataError("gmean: class " + std::string(label_name(static_cast<ClassLabel>(c))) +
                            " has no true samples; recall undefined");
        }
        product *= static_cast<double>(cm.counts[c][c]) / static_cast<double>(cm.row_sum(c));
    }
    return std::cbrt(product);
}

/// One-vs-rest ROC AUC for each class from its probability column, averaged
/// unweighted over the three classes. Computed via the Mann-Whitney rank
/// statistic with average ranks, so tied scores earn half credit.
inline double auc_ovr_macro(std::span<const ClassLabel> y_true,
                            const std::vector<Vector>& probs) {
    if (y_true.size() != probs.size()) {
        throw ShapeError("auc_ovr_macro: labels and probability rows differ in length");
    }
    if (y_true.empty()) {
        throw DataError("auc_ovr_macro: empty input");
    }
    std::array<std::int64_t, kNumClasses> support{};
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (probs[i].size() != kNumClasses) {
            throw ShapeError("auc_ovr_macro: probability row " + std::to_string(i) +
                             " does not have 3 entries");
        }
        ensure_finite(probs[i], "probability row");
        ++support[static_cast<std::size_t>(y_true[i])];
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (support[c] == 0) {
            throw DataError("auc_ovr_macro: class " +
                            std::string(label_name(static_cast<ClassLabel>(c))) +
                            " is absent from y_true");
        }
    }

    const std::size_t n = y_true.size();
    double macro = 0.0;
    std::vector<std::size_t> order(n);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return probs[a][c] < probs[b][c];
        });
        double rank_sum_pos = 0.0;
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j < n && probs[order[j]][c] == probs[order[i]][c]) ++j;
            const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // 1-based mean rank
            for (std::size_t kk = i; kk < j; ++kk) {
                if (y_true[order[kk]] == static_cast<ClassLabel>(c)) rank_sum_pos += avg_rank;
            }
            i = j;
        }
        const double npos = static_cast<double>(support[c]);
        const double nneg = static_cast<double>(n) - npos;
        macro += (rank_sum_pos - npos * (npos + 1.0) / 2.0) / (npos * nneg);
    }
    return macro / static_cast<double>(kNumClasses);
}

/// Builds a full report from true labels and per-sample class probabilities.
/// Predictions are argmax with ties toward the lowest class index.
inline MetricsReport evaluate(std::span<const ClassLabel> y_true,
                              const std::vector<Vector>& probs) {
    std::vector<ClassLabel> y_pred;
    y_pred.reserve(probs.size());
    for (const auto& row : probs) {
        y_pred.push_back(static_cast<ClassLabel>(argmax_lowest_tie(row)));
    }
    MetricsReport report;
    report.confusion = confusion(y_true, y_pred);
    report.acc = accuracy(report.confusion);
    report.f1 = macro_f1(report.confusion);
    report.gmean = gmean(report.confusion);
    report.auc = auc_ovr_macro(y_true, probs);
    report.recall = per_class_recall(report.confusion);
    report.precision = per_class_precision(report.confusion);
    return report;
}

/// Fold average: arithmetic mean of every scalar metric (matching how
/// cross-validated results are reported), confusion matrices summed.
inline MetricsReport cv_aggregate(std::span<const MetricsReport> reports) {
    if (reports.empty()) {
        throw DataError("cv_aggregate: no fold reports");
    }
    MetricsReport mean;
    const double inv = 1.0 / static_cast<double>(reports.size());
    for (const auto& r : reports) {
        mean.auc += inv * r.auc;
        mean.gmean += inv * r.gmean;
        mean.f1 += inv * r.f1;
        mean.acc += inv * r.acc;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            mean.recall[c] += inv * r.recall[c];
            mean.precision[c] += inv * r.precision[c];
            for (std::size_t p = 0; p < kNumClasses; ++p) {
                mean.confusion.counts[c][p] += r.confusion.counts[c][p];
            }
        }
    }
    return mean;
}

namespace detail {

/// 17 significant digits: enough for an exact double round trip through text.
inline std::string render_f64(double v) {
    if (std::isnan(v) || std::isinf(v)) {
        throw NumericError("report serialization: non-finite metric value");
    }
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    return buffer;
}

} // namespace detail

inline std::string report_to_json(const MetricsReport& report) {
    std::string out = "{\n";
    out += "  \"auc\": " + detail::render_f64(report.auc) + ",\n";
    out += "  \"gmean\": " + detail::render_f64(report.gmean) + ",\n";
    out += "  \"f1\": " + detail::render_f64(report.f1) + ",\n";
    out += "  \"acc\": " + detail::render_f64(report.acc) + ",\n";
    out += "  \"confusion\": [";
    for (std::size_t t = 0; t < kNumClasses; ++t) {
        out += t == 0 ? "[" : ", [";
        for (std::size_t p = 0; p < kNumClasses; ++p) {
            if (p > 0) out += ", ";
            out += std::to_string(report.confusion.counts[t][p]);
        }
        out += "]";
    }
    out += "],\n";
    auto render_array = [](const std::array<double, kNumClasses>& values) {
        std::string s = "[";
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (c > 0) s += ", ";
            s += detail::render_f64(values[c]);
        }
        return s + "]";
    };
    out += "  \"per_class\": {\n";
    out += "    \"recall\": " + render_array(report.recall) + ",\n";
    out += "    \"precision\": " + render_array(report.precision) + "\n";
    out += "  }\n";
    out += "}";
    return out;
}

inline MetricsReport report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        MetricsReport report;
        report.auc = j.at("auc").get<double>();
        report.gmean = j.at("gmean").get<double>();
        report.f1 = j.at("f1").get<double>();
        report.acc = j.at("acc").get<double>();
        for (std::size_t t = 0; t < kNumClasses; ++t) {
            for (std::size_t p = 0; p < kNumClasses; ++p) {
                report.confusion.counts[t][p] = j.at("confusion").at(t).at(p).get<std::int64_t>();
            }
        }
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            report.recall[c] = j.at("per_class").at("recall").at(c).get<double>();
            report.precision[c] = j.at("per_class").at("precision").at(c).get<double>();
        }
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid metrics report JSON: ") + e.what());
    }
}

inline std::string report_csv_row(const MetricsReport& report) {
    return detail::render_f64(report.auc) + "," + detail::render_f64(report.gmean) + "," +
           detail::render_f64(report.f1) + "," + detail::render_f64(report.acc);
}

inline constexpr const char* kReportCsvHeader = "auc,gmean,f1,acc";

} // namespace maskfuse
