#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kddids/common.hpp"
#include "kddids/dataset.hpp"
#include "kddids/evaluation.hpp"
#include "kddids/labels.hpp"
#include "kddids/misuse_centroids.hpp"
#include "kddids/neural_net.hpp"
#include "kddids/random_forest.hpp"

namespace kddids::hybrid {

/// verify: the misuse stage may clear an alarm by assigning it to a normal
/// signature. classify: alarms are never cleared; the misuse stage only
/// names the attack, using the nearest attack signature.
enum class Mode { classify, verify };

inline std::string_view to_string(Mode m) { return m == Mode::classify ? "classify" : "verify"; }

inline std::optional<Mode> parse_mode(std::string_view s) {
    if (s == "classify") return Mode::classify;
    if (s == "verify") return Mode::verify;
    return std::nullopt;
}

struct HybridModel {
    nn::MLPModel mlp;
    rf::ForestModel forest;
    misuse::CentroidModel centroids;
    StandardizationStats stats;
    Taxonomy taxonomy;
    Mode mode = Mode::verify;
};

struct StageVotes {
    CoarseLabel nn = CoarseLabel::normal;
    CoarseLabel rf = CoarseLabel::normal;
    std::optional<CoarseLabel> misuse;
};

struct FinalPrediction {
    CoarseLabel coarse = CoarseLabel::normal;
    std::optional<std::string> fine;
    bool routed = false;
    StageVotes votes;
    double misuse_distance = 0;
};

/// A connection goes to the misuse stage when either detector raises an
/// alarm or the two disagree.
inline bool route(CoarseLabel nn_label, CoarseLabel rf_label) {
    return nn_label != CoarseLabel::normal || rf_label != CoarseLabel::normal || nn_label != rf_label;
}

/// `z` must already be standardized with `h.stats`.
inline FinalPrediction predict_standardized(const HybridModel& h, std::span<const double> z) {
    FinalPrediction p;
    p.votes.nn = nn::predict(h.mlp, z);
    p.votes.rf = rf::predict(h.forest, z);
    p.routed = route(p.votes.nn, p.votes.rf);
    if (!p.routed) return p;
    const auto a = misuse::assign(h.centroids, z, h.mode == Mode::classify);
    p.votes.misuse = a.coarse_label;
    p.coarse = a.coarse_label;
    p.fine = a.fine_label;
    p.misuse_distance = a.distance;
    return p;
}

/// `x` is an encoded, unstandardized feature vector.
inline FinalPrediction predict_encoded(const HybridModel& h, const FeatureVector& x) {
    return predict_standardized(h, h.stats.apply(x));
}

inline FinalPrediction predict(const HybridModel& h, const RawRecord& record) {
    return predict_encoded(h, encode_features(record));
}

/// routed = confirmed + trimmed.
struct RoutingStats {
    std::size_t total = 0;
    std::size_t routed = 0;
    std::size_t trimmed = 0;    // routed, cleared as normal by the misuse stage
    std::size_t confirmed = 0;  // routed, kept as an attack

    void add(const FinalPrediction& p) {
        ++total;
        if (!p.routed) return;
        ++routed;
        (p.coarse == CoarseLabel::normal ? trimmed : confirmed) += 1;
    }

    RoutingStats& merge(const RoutingStats& o) {
        total += o.total;
        routed += o.routed;
        trimmed += o.trimmed;
        confirmed += o.confirmed;
        return *this;
    }

    bool operator==(const RoutingStats&) const = default;
};

struct RecordError {
    std::size_t line = 0;
    std::string reason;
};

struct BatchResult {
    std::vector<FinalPrediction> predictions;
    std::vector<RecordError> errors;
    RoutingStats stats;
};

inline BatchResult batch_predict(const HybridModel& h, std::span<const RawRecord> records) {
    BatchResult res;
    for (const auto& r : records) {
        res.predictions.push_back(predict(h, r));
        res.stats.add(res.predictions.back());
    }
    return res;
}

/// Parses and predicts each line; bad lines are collected, not fatal.
/// Blank lines are ignored.
inline BatchResult batch_predict_lines(const HybridModel& h, std::span<const std::string> lines) {
    BatchResult res;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        try {
            res.predictions.push_back(predict(h, parse_kdd_line(lines[i], i + 1)));
            res.stats.add(res.predictions.back());
        } catch (const ParseError& e) {
            res.errors.push_back({i + 1, e.what()});
        }
    }
    return res;
}

inline BatchResult batch_predict(const HybridModel& h, const Dataset& encoded) {
    BatchResult res;
    for (const auto& r : encoded.records) {
        res.predictions.push_back(predict_encoded(h, r.x));
        res.stats.add(res.predictions.back());
    }
    return res;
}

struct HybridConfig {
    nn::TrainConfig nn;
    rf::ForestConfig rf;
    misuse::MisuseConfig misuse;
    Mode mode = Mode::verify;
    /// Run the importance-based feature pruning step for the forest.
    bool prune_forest = true;
};

struct TrainingLog {
    std::vector<double> nn_epoch_loss;
    std::optional<rf::FeatureSelectionReport> forest_selection;
};

/// Fits the standardization and all three models on the same training set.
inline HybridModel train_all(const Dataset& train, const HybridConfig& config,
                             const Taxonomy& taxonomy, TrainingLog* log = nullptr) {
    HybridModel h;
    h.mode = config.mode;
    h.taxonomy = taxonomy;
    h.stats = standardize_fit(train);
    const auto id = h.stats.id();
    const auto z = standardize(train, h.stats);

    h.mlp = nn::train(z, config.nn, [&](std::size_t, double loss) {
        if (log) log->nn_epoch_loss.push_back(loss);
    });
    h.mlp.stats_id = id;

    if (config.prune_forest) {
        auto [forest, report] = rf::train_with_feature_selection(z, config.rf);
        h.forest = std::move(forest);
        if (log) log->forest_selection = std::move(report);
    } else {
        h.forest = rf::train_forest(z, config.rf);
    }
    h.forest.stats_id = id;

    h.centroids = misuse::fit(z, config.misuse);
    h.centroids.stats_id = id;
    return h;
}

/// Per-stage evaluation of a hybrid model on encoded, unstandardized data.
struct HybridEvaluation {
    ConfusionMatrix nn = ConfusionMatrix::coarse();
    ConfusionMatrix rf = ConfusionMatrix::coarse();
    /// Union of alarms: attack iff routed; attack label from whichever
    /// detector flagged it (the forest's when both did).
    ConfusionMatrix anomaly_union = ConfusionMatrix::coarse();
    ConfusionMatrix final = ConfusionMatrix::coarse();
    RoutingStats routing;
    std::size_t fine_total = 0;  // routed records with a true attack label
    std::size_t fine_hits = 0;
    std::size_t union_false_positives = 0;
    std::size_t final_false_positives = 0;
};

inline CoarseLabel union_label(const StageVotes& v) {
    if (v.rf != CoarseLabel::normal) return v.rf;
    return v.nn;
}

inline HybridEvaluation evaluate(const HybridModel& h, const Dataset& test) {
    HybridEvaluation ev;
    for (const auto& r : test.records) {
        const auto p = predict_encoded(h, r.x);
        const auto t = index_of(r.coarse_label);
        ev.nn.add(t, index_of(p.votes.nn));
        ev.rf.add(t, index_of(p.votes.rf));
        const auto u = union_label(p.votes);
        ev.anomaly_union.add(t, index_of(u));
        ev.final.add(t, index_of(p.coarse));
        ev.routing.add(p);
        if (r.coarse_label == CoarseLabel::normal) {
            ev.union_false_positives += u != CoarseLabel::normal;
            ev.final_false_positives += p.coarse != CoarseLabel::normal;
        }
        if (p.routed && r.coarse_label != CoarseLabel::normal) {
            ++ev.fine_total;
            ev.fine_hits += p.fine == r.fine_label;
        }
    }
    return ev;
}

/// Manifest plus one file per component, written next to `manifest`.
inline void save(const HybridModel& h, const std::filesystem::path& manifest) {
    const auto dir = manifest.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    const std::string stem = manifest.stem().string();
    const std::string stats_file = stem + ".stats.txt";
    const std::string mlp_file = stem + ".mlp.txt";
    const std::string forest_file = stem + ".forest.txt";
    const std::string centroid_file = stem + ".centroids.txt";
    const std::string taxonomy_file = stem + ".taxonomy.txt";
    write_file_atomic(dir / stats_file, h.stats.serialize());
    write_file_atomic(dir / mlp_file, nn::serialize(h.mlp));
    write_file_atomic(dir / forest_file, rf::serialize(h.forest));
    write_file_atomic(dir / centroid_file, misuse::serialize(h.centroids));
    write_file_atomic(dir / taxonomy_file, h.taxonomy.serialize());
    std::string m = "kddids-hybrid 1\n";
    m += "mode " + std::string(to_string(h.mode)) + "\n";
    m += "stats_id " + h.stats.id() + "\n";
    m += "stats " + stats_file + "\n";
    m += "mlp " + mlp_file + "\n";
    m += "forest " + forest_file + "\n";
    m += "centroids " + centroid_file + "\n";
    m += "taxonomy " + taxonomy_file + "\n";
    write_file_atomic(manifest, m);
}

/// Loads and cross-checks a manifest written by save().
inline HybridModel load(const std::filesystem::path& manifest) {
    TextReader in(read_file(manifest), manifest.string());
    in.expect_header("kddids-hybrid", 1);
    const auto dir = manifest.parent_path();
    HybridModel h;
    const auto mode = parse_mode(in.expect("mode", 1)[0]);
    if (!mode) in.fail("unknown mode");
    h.mode = *mode;
    const std::string id(in.expect("stats_id", 1)[0]);
    auto path_of = [&](std::string_view key) { return dir / std::string(in.expect(key, 1)[0]); };
    const auto stats_path = path_of("stats");
    h.stats = StandardizationStats::parse(read_file(stats_path), stats_path.string());
    const auto mlp_path = path_of("mlp");
    h.mlp = nn::parse_mlp(read_file(mlp_path), mlp_path.string());
    const auto forest_path = path_of("forest");
    h.forest = rf::parse_forest(read_file(forest_path), forest_path.string());
    const auto centroid_path = path_of("centroids");
    h.centroids = misuse::parse_centroids(read_file(centroid_path), centroid_path.string());
    const auto taxonomy_path = path_of("taxonomy");
    h.taxonomy = Taxonomy::parse(read_file(taxonomy_path), taxonomy_path.string());

    auto check = [&](bool ok, const std::string& what) {
        if (!ok) throw FormatError(manifest.string() + ": inconsistent model: " + what);
    };
    check(h.stats.id() == id, "stats file does not match manifest stats_id");
    check(h.mlp.stats_id == id, "network was trained under different standardization");
    check(h.forest.stats_id == id, "forest was trained under different standardization");
    check(h.centroids.stats_id == id, "centroids were fit under different standardization");
    check(h.mlp.input_dim() == kFeatureDim && h.mlp.output_dim() == kNumClasses,
          "network is not 41 -> 5");
    check(!h.forest.trees.empty(), "forest has no trees");
    check(!h.centroids.entries.empty(), "centroid model is empty");
    for (const auto& e : h.centroids.entries) {
        check(h.taxonomy.contains(e.fine_label) && h.taxonomy.coarse_of(e.fine_label) == e.coarse_label,
              "centroid '" + e.fine_label + "' disagrees with the taxonomy");
    }
    return h;
}

}  // namespace kddids::hybrid
