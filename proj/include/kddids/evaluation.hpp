#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "kddids/common.hpp"
#include "kddids/labels.hpp"

namespace kddids {

/// Rows are truth, columns are prediction.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::vector<std::string> classes)
        : classes_(std::move(classes)), counts_(classes_.size() * classes_.size(), 0) {}

    /// The five coarse classes in canonical order.
    static ConfusionMatrix coarse() {
        std::vector<std::string> names;
        for (auto c : kAllClasses) names.emplace_back(to_string(c));
        return ConfusionMatrix(std::move(names));
    }

    std::size_t size() const { return classes_.size(); }
    const std::vector<std::string>& classes() const { return classes_; }

    std::size_t index(std::string_view name) const {
        auto it = std::find(classes_.begin(), classes_.end(), name);
        if (it == classes_.end()) throw Error("unknown label '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - classes_.begin());
    }

    std::size_t& at(std::size_t truth, std::size_t pred) {
        return counts_.at(truth * classes_.size() + pred);
    }
    std::size_t at(std::size_t truth, std::size_t pred) const {
        return counts_.at(truth * classes_.size() + pred);
    }

    void add(std::size_t truth, std::size_t pred, std::size_t n = 1) { at(truth, pred) += n; }

    std::size_t total() const {
        std::size_t t = 0;
        for (auto v : counts_) t += v;
        return t;
    }

    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t i = 0; i < size(); ++i) t += at(i, i);
        return t;
    }

    std::size_t row_sum(std::size_t i) const {
        std::size_t s = 0;
        for (std::size_t j = 0; j < size(); ++j) s += at(i, j);
        return s;
    }

    std::size_t col_sum(std::size_t j) const {
        std::size_t s = 0;
        for (std::size_t i = 0; i < size(); ++i) s += at(i, j);
        return s;
    }

    /// Element-wise sum; both matrices must share the class list.
    ConfusionMatrix& merge(const ConfusionMatrix& other) {
        if (other.classes_ != classes_) throw Error("cannot merge confusion matrices: class sets differ");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
        return *this;
    }

    /// Header row and column of class names.
    std::string to_csv() const {
        std::string out = "truth\\predicted";
        for (const auto& c : classes_) out += "," + c;
        out += '\n';
        for (std::size_t i = 0; i < size(); ++i) {
            out += classes_[i];
            for (std::size_t j = 0; j < size(); ++j) out += "," + std::to_string(at(i, j));
            out += '\n';
        }
        return out;
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::vector<std::string> classes_;
    std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::string> preds,
                                 std::span<const std::string> truths,
                                 std::vector<std::string> classes) {
    if (preds.size() != truths.size()) {
        throw Error("length mismatch: " + std::to_string(preds.size()) + " predictions, " +
                    std::to_string(truths.size()) + " truths");
    }
    ConfusionMatrix m(std::move(classes));
    for (std::size_t i = 0; i < preds.size(); ++i) m.add(m.index(truths[i]), m.index(preds[i]));
    return m;
}

inline ConfusionMatrix confusion(std::span<const CoarseLabel> preds,
                                 std::span<const CoarseLabel> truths) {
    if (preds.size() != truths.size()) {
        throw Error("length mismatch: " + std::to_string(preds.size()) + " predictions, " +
                    std::to_string(truths.size()) + " truths");
    }
    auto m = ConfusionMatrix::coarse();
    for (std::size_t i = 0; i < preds.size(); ++i) m.add(index_of(truths[i]), index_of(preds[i]));
    return m;
}

/// One-vs-rest metrics of a single class, in percent.
struct ClassMetric {
    std::string name;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0, recall = 0, accuracy = 0;
    bool precision_undefined = false;
    bool recall_undefined = false;
};

using ClassMetrics = std::vector<ClassMetric>;

/// Each class against the rest of the evaluated set. Zero denominators give
/// 0 with the matching `*_undefined` flag set.
inline ClassMetrics per_class_metrics(const ConfusionMatrix& m) {
    const std::size_t n = m.total();
    if (n == 0) throw Error("cannot compute metrics of an empty confusion matrix");
    ClassMetrics out;
    for (std::size_t c = 0; c < m.size(); ++c) {
        ClassMetric cm;
        cm.name = m.classes()[c];
        cm.tp = m.at(c, c);
        cm.fp = m.col_sum(c) - cm.tp;
        cm.fn = m.row_sum(c) - cm.tp;
        cm.tn = n - cm.tp - cm.fp - cm.fn;
        if (cm.tp + cm.fp == 0) cm.precision_undefined = true;
        else cm.precision = 100.0 * static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
        if (cm.tp + cm.fn == 0) cm.recall_undefined = true;
        else cm.recall = 100.0 * static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
        cm.accuracy = 100.0 * static_cast<double>(cm.tp + cm.tn) / static_cast<double>(n);
        out.push_back(std::move(cm));
    }
    return out;
}

inline double overall_accuracy(const ConfusionMatrix& m) {
    const std::size_t n = m.total();
    if (n == 0) throw Error("cannot compute accuracy of an empty confusion matrix");
    return 100.0 * static_cast<double>(m.trace()) / static_cast<double>(n);
}

namespace detail {

inline std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

}  // namespace detail

/// Precision/Recall/Accuracy rows with one column per class, three decimals.
/// Undefined values print as "n/a".
inline std::string format_metrics_table(const ClassMetrics& metrics, std::string_view title) {
    constexpr std::size_t w = 10;
    std::string out(title);
    out += '\n';
    out += detail::pad("Label:", 12);
    for (const auto& m : metrics) out += detail::pad(m.name, w);
    out += '\n';
    auto row = [&](const char* name, auto value, auto undefined) {
        out += detail::pad(name, 12);
        for (const auto& m : metrics) {
            out += detail::pad(undefined(m) ? "n/a" : format_fixed(value(m), 3), w);
        }
        out += '\n';
    };
    row("Precision:", [](const ClassMetric& m) { return m.precision; },
        [](const ClassMetric& m) { return m.precision_undefined; });
    row("Recall:", [](const ClassMetric& m) { return m.recall; },
        [](const ClassMetric& m) { return m.recall_undefined; });
    row("Accuracy:", [](const ClassMetric& m) { return m.accuracy; },
        [](const ClassMetric&) { return false; });
    return out;
}

/// class,precision,recall,accuracy,tp,fp,fn,tn,precision_defined,recall_defined
inline std::string metrics_to_csv(const ClassMetrics& metrics) {
    std::string out = "class,precision,recall,accuracy,tp,fp,fn,tn,precision_defined,recall_defined\n";
    for (const auto& m : metrics) {
        out += m.name + "," + format_fixed(m.precision, 3) + "," + format_fixed(m.recall, 3) + "," +
               format_fixed(m.accuracy, 3) + "," + std::to_string(m.tp) + "," +
               std::to_string(m.fp) + "," + std::to_string(m.fn) + "," + std::to_string(m.tn) +
               "," + (m.precision_undefined ? "0" : "1") + "," + (m.recall_undefined ? "0" : "1") +
               "\n";
    }
    return out;
}

inline std::string format_confusion(const ConfusionMatrix& m) {
    std::size_t w = 8;
    for (const auto& c : m.classes()) w = std::max(w, c.size() + 2);
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m.size(); ++j) {
            w = std::max(w, std::to_string(m.at(i, j)).size() + 2);
        }
    }
    std::string out = detail::pad("truth\\pred", w + 2);
    for (const auto& c : m.classes()) out += detail::pad(c, w);
    out += '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        out += detail::pad(m.classes()[i], w + 2);
        for (std::size_t j = 0; j < m.size(); ++j) out += detail::pad(std::to_string(m.at(i, j)), w);
        out += '\n';
    }
    return out;
}

}  // namespace kddids
