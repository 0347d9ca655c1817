#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "kddids/common.hpp"
#include "kddids/config.hpp"
#include "kddids/dataset.hpp"
#include "kddids/evaluation.hpp"
#include "kddids/hybrid_pipeline.hpp"
#include "kddids/labels.hpp"
#include "kddids/misuse_centroids.hpp"
#include "kddids/neural_net.hpp"
#include "kddids/random_forest.hpp"

namespace kddids::cli {

namespace fs = std::filesystem;

/// File names inside a prepared-data directory.
inline constexpr std::string_view kTrainFile = "train.csv";
inline constexpr std::string_view kTestFile = "test.csv";
inline constexpr std::string_view kStatsFile = "stats.txt";
inline constexpr std::string_view kSummaryFile = "summary.txt";

/// Default model file names written by `train`.
inline constexpr std::string_view kNnFile = "nn.txt";
inline constexpr std::string_view kForestFile = "forest.txt";
inline constexpr std::string_view kCentroidFile = "centroids.txt";
inline constexpr std::string_view kHybridFile = "hybrid.manifest";

enum class ModelKind { nn, rf, misuse, hybrid };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::nn: return "nn";
        case ModelKind::rf: return "rf";
        case ModelKind::misuse: return "misuse";
        case ModelKind::hybrid: return "hybrid";
    }
    return "?";
}

inline std::optional<ModelKind> parse_kind(std::string_view s) {
    if (s == "nn") return ModelKind::nn;
    if (s == "rf") return ModelKind::rf;
    if (s == "misuse") return ModelKind::misuse;
    if (s == "hybrid") return ModelKind::hybrid;
    return std::nullopt;
}

/// Identifies a model file by its format line.
inline ModelKind detect_kind(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model: " + path.string());
    std::string first;
    in >> first;
    if (first == "kddids-mlp") return ModelKind::nn;
    if (first == "kddids-forest") return ModelKind::rf;
    if (first == "kddids-centroids") return ModelKind::misuse;
    if (first == "kddids-hybrid") return ModelKind::hybrid;
    throw FormatError(path.string() + ": not a kddids model file");
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Counts in Table I layout: one column per class, rows before/after.
inline std::string format_count_table(const ClassCounts& before, const ClassCounts& after) {
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.insert(0, w - s.size(), ' ');
        return s;
    };
    std::string out = pad("Label:", 18);
    for (auto c : kAllClasses) out += pad(std::string(to_string(c)), 9);
    out += "\n" + pad("Before Sampling:", 18);
    for (auto v : before) out += pad(std::to_string(v), 9);
    out += "\n" + pad("After Sampling:", 18);
    for (auto v : after) out += pad(std::to_string(v), 9);
    return out + "\n";
}

struct PrepareResult {
    std::size_t lines = 0;
    std::size_t parsed = 0;
    std::size_t distinct = 0;
    ClassCounts before{};
    ClassCounts after{};
    std::size_t train_size = 0;
    std::size_t test_size = 0;
};

/// parse -> dedup -> encode -> resample -> stratified split -> write.
/// Nothing is written unless every step succeeds.
inline PrepareResult cmd_prepare(const RunConfig& config, const fs::path& input, const fs::path& out_dir,
                                 std::ostream& log) {
    PrepareResult res;
    auto read = read_kdd_file(input);
    res.lines = read.lines;
    if (!read.errors.empty()) {
        const std::size_t shown = std::min<std::size_t>(read.errors.size(), 20);
        for (std::size_t i = 0; i < shown; ++i) log << input.string() << ": " << read.errors[i].what() << "\n";
        if (read.errors.size() > shown) log << "... " << read.errors.size() - shown << " more\n";
        throw Error(std::to_string(read.errors.size()) + " malformed line(s) in " + input.string());
    }
    if (read.records.empty()) throw Error("no records in " + input.string());
    res.parsed = read.records.size();

    auto distinct = deduplicate(read.records);
    read.records.clear();
    res.distinct = distinct.size();
    std::set<std::string> unmapped;
    for (const auto& r : distinct) {
        if (!config.taxonomy.contains(r.fine_label)) unmapped.insert(r.fine_label);
    }
    if (!unmapped.empty()) {
        std::string names;
        for (const auto& u : unmapped) names += (names.empty() ? "" : ", ") + u;
        throw Error("labels missing from the taxonomy: " + names +
                    " (add taxonomy.<label>=<class> lines to the config)");
    }
    const auto encoded = encode_all(distinct, config.taxonomy, input.filename().string());
    res.before = encoded.class_counts();
    const auto plan = config.sampling_plan();
    auto sampled = resample(encoded, plan);
    res.after = sampled.class_counts();

    const auto split = stratified_split(sampled, config.test_fraction, config.component_seed("split"));
    const auto train = subset(sampled, split.train);
    const auto test = subset(sampled, split.validation);
    res.train_size = train.size();
    res.test_size = test.size();
    const auto stats = standardize_fit(train);

    std::string summary = "# " + config.seed_banner() + "\n";
    summary += "source " + input.filename().string() + "\n";
    summary += "lines " + std::to_string(res.lines) + "\n";
    summary += "records " + std::to_string(res.parsed) + "\n";
    summary += "distinct " + std::to_string(res.distinct) + "\n";
    summary += "sampling_plan";
    for (auto c : kAllClasses) summary += " " + std::string(to_string(c)) + "=" + std::to_string(plan.target[index_of(c)]);
    summary += "\ntrain " + std::to_string(res.train_size) + " test " + std::to_string(res.test_size) +
               " test_fraction " + format_double(config.test_fraction) + "\n";
    summary += "stats_id " + stats.id() + "\n\n";
    summary += format_count_table(res.before, res.after);
    summary += "\nfine labels after sampling:\n";
    for (const auto& [label, n] : sampled.fine_counts()) summary += "  " + label + " " + std::to_string(n) + "\n";

    fs::create_directories(out_dir);
    write_file_atomic(out_dir / kTrainFile, dataset_to_csv(train));
    write_file_atomic(out_dir / kTestFile, dataset_to_csv(test));
    write_file_atomic(out_dir / kStatsFile, stats.serialize());
    write_file_atomic(out_dir / kSummaryFile, summary);
    log << summary;
    return res;
}

/// Prepared training data with the stats file validated against it.
struct PreparedData {
    Dataset train;
    StandardizationStats stats;
};

inline PreparedData load_prepared_train(const fs::path& data_dir) {
    PreparedData p;
    p.train = read_dataset_csv(data_dir / kTrainFile);
    const auto stats_path = data_dir / kStatsFile;
    p.stats = StandardizationStats::parse(read_file(stats_path), stats_path.string());
    if (standardize_fit(p.train).id() != p.stats.id()) {
        throw Error(stats_path.string() + " was not fit on " + (data_dir / kTrainFile).string());
    }
    return p;
}

inline std::string format_importances(const FeatureVector& imp) {
    std::vector<std::size_t> order = rf::all_features();
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return imp[a] > imp[b]; });
    std::string out;
    for (auto f : order) {
        out += "  " + std::to_string(f) + " " + encoded_column_names()[f] + " " + format_fixed(imp[f], 6) + "\n";
    }
    return out;
}

inline std::string format_selection(const rf::FeatureSelectionReport& r) {
    std::string out = "feature selection on a " + std::to_string(r.validation_size) + "-record holdout:\n";
    out += "  selected " + std::to_string(r.prune.selected.size()) + " features:";
    for (auto f : r.prune.selected) out += " " + encoded_column_names()[f];
    out += "\n  holdout accuracy unpruned " + format_fixed(r.prune.accuracy_unpruned, 3) + " pruned " +
           format_fixed(r.prune.accuracy_pruned, 3) + "\n";
    out += r.prune.pruned ? "  kept pruned feature set\n"
                          : "  warning: pruning cost more than the tolerated accuracy; kept all features\n";
    return out;
}

/// Trains the requested model(s) into `out_dir`; returns the written paths.
inline std::vector<fs::path> cmd_train(const RunConfig& config, ModelKind which, const fs::path& data_dir,
                                       const fs::path& out_dir, std::ostream& log) {
    const auto data = load_prepared_train(data_dir);
    const auto models = config.seeded_models();
    const auto id = data.stats.id();
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    Stopwatch clock;
    std::string report = "# " + config.seed_banner() + "\n";
    report += "model " + std::string(to_string(which)) + "\ntrain_records " + std::to_string(data.train.size()) + "\n";

    switch (which) {
        case ModelKind::nn: {
            const auto cv = nn::cross_validate(data.train, config.nn_folds, models.nn, config.component_seed("cv"));
            report += "cross_validation k=" + std::to_string(config.nn_folds) + "\n";
            for (std::size_t f = 0; f < cv.fold_accuracy.size(); ++f) {
                report += "  fold " + std::to_string(f) + " accuracy " + format_fixed(cv.fold_accuracy[f], 3) + "\n";
            }
            report += "  mean accuracy " + format_fixed(cv.mean_accuracy, 3) + "\n";
            report += "epoch losses:";
            auto model = nn::train(standardize(data.train, data.stats), models.nn,
                                   [&](std::size_t, double loss) { report += " " + format_fixed(loss, 6); });
            report += "\n";
            model.stats_id = id;
            written.push_back(out_dir / kNnFile);
            write_file_atomic(written.back(), nn::serialize(model));
            break;
        }
        case ModelKind::rf: {
            const auto z = standardize(data.train, data.stats);
            rf::ForestModel model;
            if (models.prune_forest) {
                auto [forest, sel] = rf::train_with_feature_selection(z, models.rf);
                model = std::move(forest);
                report += format_selection(sel);
                if (!sel.prune.pruned) log << "warning: feature pruning rejected, keeping all features\n";
            } else {
                model = rf::train_forest(z, models.rf);
            }
            model.stats_id = id;
            report += "importances:\n" + format_importances(model.feature_importances);
            written.push_back(out_dir / kForestFile);
            write_file_atomic(written.back(), rf::serialize(model));
            break;
        }
        case ModelKind::misuse: {
            auto model = misuse::fit(standardize(data.train, data.stats), models.misuse);
            model.stats_id = id;
            report += "entries " + std::to_string(model.entries.size()) + " fine_labels " +
                      std::to_string(model.label_count()) + "\n";
            for (auto i : misuse::shadowed_entries(model)) {
                const auto msg = "signature collision: centroid of '" + model.entries[i].fine_label +
                                 "' is nearer another signature";
                report += "warning: " + msg + "\n";
                log << "warning: " << msg << "\n";
            }
            written.push_back(out_dir / kCentroidFile);
            write_file_atomic(written.back(), misuse::serialize(model));
            break;
        }
        case ModelKind::hybrid: {
            hybrid::TrainingLog tlog;
            const auto h = hybrid::train_all(data.train, models, config.taxonomy, &tlog);
            if (h.stats.id() != id) throw Error("internal: hybrid stats differ from prepared stats");
            report += "mode " + std::string(hybrid::to_string(h.mode)) + "\n";
            if (tlog.forest_selection) report += format_selection(*tlog.forest_selection);
            written.push_back(out_dir / kHybridFile);
            hybrid::save(h, written.back());
            break;
        }
    }
    const auto report_path = out_dir / (std::string(to_string(which)) + "_train_report.txt");
    write_file_atomic(report_path, report);
    written.push_back(report_path);
    log << report;
    log << "training time " << format_fixed(clock.seconds(), 1) << " s\n";
    return written;
}

struct EvaluationOutput {
    std::string report;                              // human-readable tables
    std::vector<std::pair<std::string, std::string>> files;  // name -> contents
    double overall_accuracy = 0;
};

inline void add_matrix(EvaluationOutput& out, const std::string& prefix, const std::string& title,
                       const ConfusionMatrix& m) {
    const auto metrics = per_class_metrics(m);
    out.report += format_metrics_table(metrics, title);
    out.report += "Overall accuracy: " + format_fixed(overall_accuracy(m), 3) + "\n\n";
    out.report += format_confusion(m) + "\n";
    out.files.emplace_back(prefix + "metrics.csv", metrics_to_csv(metrics));
    out.files.emplace_back(prefix + "confusion.csv", m.to_csv());
}

/// Loads `stats.txt` next to the test file when present, else returns nullopt.
inline std::optional<StandardizationStats> stats_near(const fs::path& test_file) {
    const auto p = test_file.parent_path() / kStatsFile;
    if (!fs::exists(p)) return std::nullopt;
    return StandardizationStats::parse(read_file(p), p.string());
}

inline void require_same_stats(const std::string& model_id, const std::optional<StandardizationStats>& data_stats,
                               const fs::path& test_file) {
    if (!data_stats) throw Error("no " + std::string(kStatsFile) + " next to " + test_file.string());
    if (data_stats->id() != model_id) {
        throw Error("stats identifier mismatch: model " + model_id + ", data " + data_stats->id());
    }
}

inline EvaluationOutput evaluate_model(const RunConfig& config, const fs::path& model_path, const fs::path& test_file) {
    const auto kind = detect_kind(model_path);
    const auto test = read_dataset_csv(test_file);
    const auto data_stats = stats_near(test_file);
    EvaluationOutput out;
    out.report = "# " + config.seed_banner() + "\n# model " + model_path.filename().string() + " (" +
                 std::string(to_string(kind)) + "), test " + test_file.filename().string() + ", " +
                 std::to_string(test.size()) + " records\n\n";
    switch (kind) {
        case ModelKind::nn: {
            const auto m = nn::parse_mlp(read_file(model_path), model_path.string());
            require_same_stats(m.stats_id, data_stats, test_file);
            const auto cm = nn::evaluate(m, standardize(test, *data_stats));
            add_matrix(out, "", "Neural Network:", cm);
            out.overall_accuracy = overall_accuracy(cm);
            break;
        }
        case ModelKind::rf: {
            const auto m = rf::parse_forest(read_file(model_path), model_path.string());
            require_same_stats(m.stats_id, data_stats, test_file);
            const auto cm = rf::evaluate(m, standardize(test, *data_stats));
            add_matrix(out, "", "Random Forest:", cm);
            out.overall_accuracy = overall_accuracy(cm);
            break;
        }
        case ModelKind::misuse: {
            const auto m = misuse::parse_centroids(read_file(model_path), model_path.string());
            require_same_stats(m.stats_id, data_stats, test_file);
            const auto ev = misuse::evaluate_misuse(m, standardize(test, *data_stats));
            out.report += "Misuse:\nType of Classification:   5 Class   " + std::to_string(m.label_count()) +
                          " Class\n              Accuracy:  " + format_fixed(ev.coarse_accuracy, 3) + "   " +
                          format_fixed(ev.fine_accuracy, 3) + "\n\n";
            add_matrix(out, "", "Misuse (5 class):", ev.coarse_confusion);
            out.files.emplace_back("fine_confusion.csv", ev.fine_confusion.to_csv());
            out.files.emplace_back("misuse_accuracy.csv",
                                   "classification,classes,accuracy\ncoarse,5," + format_fixed(ev.coarse_accuracy, 3) +
                                       "\nfine," + std::to_string(m.label_count()) + "," +
                                       format_fixed(ev.fine_accuracy, 3) + "\n");
            out.overall_accuracy = ev.coarse_accuracy;
            break;
        }
        case ModelKind::hybrid: {
            const auto h = hybrid::load(model_path);
            if (data_stats && data_stats->id() != h.stats.id()) {
                throw Error("stats identifier mismatch: model " + h.stats.id() + ", data " + data_stats->id());
            }
            const auto ev = hybrid::evaluate(h, test);
            out.report += "mode " + std::string(hybrid::to_string(h.mode)) + "\n\n";
            add_matrix(out, "nn_", "Neural Network (stage):", ev.nn);
            add_matrix(out, "rf_", "Random Forest (stage):", ev.rf);
            add_matrix(out, "union_", "Union of anomaly alarms:", ev.anomaly_union);
            add_matrix(out, "", "Hybrid final:", ev.final);
            const auto& r = ev.routing;
            std::string routing = "total,routed,trimmed,confirmed,union_false_positives,final_false_positives,"
                                  "fine_total,fine_correct\n" +
                                  std::to_string(r.total) + "," + std::to_string(r.routed) + "," +
                                  std::to_string(r.trimmed) + "," + std::to_string(r.confirmed) + "," +
                                  std::to_string(ev.union_false_positives) + "," +
                                  std::to_string(ev.final_false_positives) + "," + std::to_string(ev.fine_total) +
                                  "," + std::to_string(ev.fine_hits) + "\n";
            out.report += "routing: routed " + std::to_string(r.routed) + " = confirmed " + std::to_string(r.confirmed) +
                          " + trimmed " + std::to_string(r.trimmed) + " (of " + std::to_string(r.total) + ")\n";
            out.report += "false positives: union of alarms " + std::to_string(ev.union_false_positives) +
                          ", hybrid final " + std::to_string(ev.final_false_positives) + "\n";
            if (ev.fine_total > 0) {
                out.report += "fine-label accuracy on routed attacks: " +
                              format_fixed(100.0 * static_cast<double>(ev.fine_hits) / static_cast<double>(ev.fine_total), 3) +
                              "\n";
            }
            out.files.emplace_back("routing.csv", routing);
            out.overall_accuracy = overall_accuracy(ev.final);
            break;
        }
    }
    out.files.emplace_back("report.txt", out.report);
    return out;
}

inline EvaluationOutput cmd_evaluate(const RunConfig& config, const fs::path& model_path, const fs::path& test_file,
                                     const fs::path& out_dir, std::ostream& log) {
    auto out = evaluate_model(config, model_path, test_file);
    fs::create_directories(out_dir);
    for (const auto& [name, contents] : out.files) write_file_atomic(out_dir / name, contents);
    log << out.report;
    return out;
}

struct PredictSummary {
    std::size_t predicted = 0;
    std::size_t rejected = 0;
    hybrid::RoutingStats routing;
};

inline std::string format_prediction(const hybrid::FinalPrediction& p) {
    std::string s(to_string(p.coarse));
    s += ",";
    s += p.fine ? *p.fine : "-";
    s += p.routed ? ",routed=true" : ",routed=false";
    s += ",nn=" + std::string(to_string(p.votes.nn));
    s += ",rf=" + std::string(to_string(p.votes.rf));
    s += ",misuse=" + (p.votes.misuse ? std::string(to_string(*p.votes.misuse)) : std::string("-"));
    return s;
}

/// One verdict line per valid input record; malformed lines go to `rejects`.
inline PredictSummary cmd_predict(const fs::path& model_path, const fs::path& input, const fs::path& output,
                                  const fs::path& rejects_path) {
    const auto h = hybrid::load(model_path);
    PredictSummary s;
    std::string verdicts = "coarse,fine,routed,nn,rf,misuse\n";
    std::string rejects;
    for_each_line(input, [&](std::string_view line, std::size_t no) {
        if (trim(line).empty()) return;
        try {
            const auto p = hybrid::predict(h, parse_kdd_line(line, no));
            verdicts += format_prediction(p) + "\n";
            s.routing.add(p);
            ++s.predicted;
        } catch (const ParseError& e) {
            rejects += std::string(e.what()) + "\t" + std::string(line) + "\n";
            ++s.rejected;
        }
    });
    if (!output.parent_path().empty()) fs::create_directories(output.parent_path());
    write_file_atomic(output, verdicts);
    write_file_atomic(rejects_path, rejects);
    return s;
}

/// Evaluates every model found in `model_dir` on the prepared test split
/// and writes the combined tables to `out_dir/tables.txt`.
inline std::string cmd_report(const RunConfig& config, const fs::path& data_dir, const fs::path& model_dir,
                              const fs::path& out_dir, std::ostream& log) {
    const auto test_file = data_dir / kTestFile;
    std::string tables = "# " + config.seed_banner() + "\n";
    const auto summary = data_dir / kSummaryFile;
    if (fs::exists(summary)) tables += "\n== Data ==\n" + read_file(summary);
    bool any = false;
    for (auto [file, title] : {std::pair{kNnFile, "Neural network"}, {kForestFile, "Random forest"},
                               {kCentroidFile, "Misuse"}, {kHybridFile, "Hybrid"}}) {
        const auto path = model_dir / file;
        if (!fs::exists(path)) continue;
        any = true;
        const auto ev = evaluate_model(config, path, test_file);
        tables += "\n== " + std::string(title) + " ==\n" + ev.report;
    }
    if (!any) throw Error("no models found in " + model_dir.string());
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "tables.txt", tables);
    log << tables;
    return tables;
}

}  // namespace kddids::cli
