#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kddids/common.hpp"
#include "kddids/dataset.hpp"
#include "kddids/evaluation.hpp"
#include "kddids/labels.hpp"

namespace kddids::misuse {

/// A stored signature: the mean standardized vector of one fine label (or of
/// one sub-cluster of it when more than one cluster per label is requested).
struct CentroidEntry {
    std::string fine_label;
    CoarseLabel coarse_label = CoarseLabel::normal;
    FeatureVector centroid{};
    std::size_t support = 0;
    std::size_t cluster = 0;

    bool operator==(const CentroidEntry&) const = default;
};

/// Entries are ordered by (fine label, cluster); that order breaks exact
/// distance ties.
struct CentroidModel {
    std::vector<CentroidEntry> entries;
    std::string stats_id;

    /// Number of distinct fine labels.
    std::size_t label_count() const {
        std::set<std::string_view> s;
        for (const auto& e : entries) s.insert(e.fine_label);
        return s.size();
    }

    bool operator==(const CentroidModel&) const = default;
};

struct MisuseConfig {
    /// Clusters per fine label; 1 gives one centroid per label.
    std::size_t clusters_per_label = 1;
    std::size_t max_iterations = 50;
    std::uint64_t seed = 1;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

namespace detail {

inline FeatureVector mean_of(const Dataset& ds, std::span<const std::size_t> members) {
    FeatureVector c{};
    for (auto i : members) {
        for (std::size_t j = 0; j < kFeatureDim; ++j) c[j] += ds.records[i].x[j];
    }
    for (auto& v : c) v /= static_cast<double>(members.size());
    return c;
}

/// Lloyd iterations with k-means++ seeding inside one label's points.
inline std::vector<std::pair<FeatureVector, std::size_t>> kmeans(
    const Dataset& ds, const std::vector<std::size_t>& members, std::size_t k,
    const MisuseConfig& config, Rng& rng) {
    std::vector<FeatureVector> centers{ds.records[members[uniform_index(rng, members.size())]].x};
    std::vector<double> d2(members.size());
    while (centers.size() < k) {
        double total = 0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, squared_distance(ds.records[members[i]].x, c));
            d2[i] = best;
            total += best;
        }
        if (total == 0) break;  // fewer distinct points than k
        double target = uniform_unit(rng) * total;
        std::size_t pick = 0;
        for (; pick + 1 < members.size(); ++pick) {
            target -= d2[pick];
            if (target < 0) break;
        }
        centers.push_back(ds.records[members[pick]].x);
    }
    std::vector<std::size_t> assign(members.size(), 0);
    for (std::size_t it = 0; it < config.max_iterations; ++it) {
        bool changed = it == 0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            std::size_t best = 0;
            double bd = squared_distance(ds.records[members[i]].x, centers[0]);
            for (std::size_t c = 1; c < centers.size(); ++c) {
                const double d = squared_distance(ds.records[members[i]].x, centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[i] != best) changed = true;
            assign[i] = best;
        }
        if (!changed) break;
        std::vector<FeatureVector> sums(centers.size(), FeatureVector{});
        std::vector<std::size_t> counts(centers.size(), 0);
        for (std::size_t i = 0; i < members.size(); ++i) {
            for (std::size_t j = 0; j < kFeatureDim; ++j) sums[assign[i]][j] += ds.records[members[i]].x[j];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (counts[c] == 0) continue;  // keeps its previous position
            for (std::size_t j = 0; j < kFeatureDim; ++j) centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
        }
    }
    std::vector<std::size_t> counts(centers.size(), 0);
    for (auto a : assign) ++counts[a];
    std::vector<std::pair<FeatureVector, std::size_t>> out;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        if (counts[c] > 0) out.emplace_back(centers[c], counts[c]);
    }
    return out;
}

}  // namespace detail

/// One centroid per fine label present in the (standardized) training set.
inline CentroidModel fit(const Dataset& ds, const MisuseConfig& config = {}) {
    if (ds.empty()) throw Error("cannot fit centroids on an empty dataset");
    if (config.clusters_per_label == 0) throw Error("clusters per label must be at least 1");
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.records.size(); ++i) groups[ds.records[i].fine_label].push_back(i);
    CentroidModel model;
    for (const auto& [label, members] : groups) {
        const CoarseLabel coarse = ds.records[members.front()].coarse_label;
        for (auto i : members) {
            if (ds.records[i].coarse_label != coarse) {
                throw Error("fine label '" + label + "' appears with more than one coarse class");
            }
        }
        if (config.clusters_per_label == 1) {
            model.entries.push_back({label, coarse, detail::mean_of(ds, members), members.size(), 0});
            continue;
        }
        Rng rng(derive_seed(config.seed, label));
        const auto clusters = detail::kmeans(ds, members, std::min(config.clusters_per_label, members.size()), config, rng);
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            model.entries.push_back({label, coarse, clusters[c].first, clusters[c].second, c});
        }
    }
    return model;
}

struct Assignment {
    std::size_t entry = 0;
    std::string fine_label;
    CoarseLabel coarse_label = CoarseLabel::normal;
    double distance = 0;
};

/// Nearest centroid by Euclidean distance; exact ties go to the first entry
/// in (fine label, cluster) order. With `attacks_only`, normal entries are
/// skipped.
inline Assignment assign(const CentroidModel& model, std::span<const double> x,
                         bool attacks_only = false) {
    if (x.size() != kFeatureDim) {
        throw Error("dimension mismatch: expected 41 features, got " + std::to_string(x.size()));
    }
    std::optional<std::size_t> best;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < model.entries.size(); ++i) {
        const auto& e = model.entries[i];
        if (attacks_only && e.coarse_label == CoarseLabel::normal) continue;
        const double d = squared_distance(x, e.centroid);
        if (!best || d < bd) {
            best = i;
            bd = d;
        }
    }
    if (!best) throw Error(attacks_only ? "centroid model has no attack entries" : "empty centroid model");
    const auto& e = model.entries[*best];
    return {*best, e.fine_label, e.coarse_label, std::sqrt(bd)};
}

/// The coarse class of the nearest signature; normal clears the alarm.
inline CoarseLabel verify_alarm(const CentroidModel& model, std::span<const double> x) {
    return assign(model, x).coarse_label;
}

struct MisuseEvaluation {
    double fine_accuracy = 0;    // percent
    double coarse_accuracy = 0;  // percent
    ConfusionMatrix coarse_confusion = ConfusionMatrix::coarse();
    ConfusionMatrix fine_confusion{{}};
};

inline MisuseEvaluation evaluate_misuse(const CentroidModel& model, const Dataset& test) {
    if (test.empty()) throw Error("cannot evaluate on an empty dataset");
    std::set<std::string> labels;
    for (const auto& e : model.entries) labels.insert(e.fine_label);
    for (const auto& r : test.records) labels.insert(r.fine_label);
    MisuseEvaluation ev;
    ev.fine_confusion = ConfusionMatrix(std::vector<std::string>(labels.begin(), labels.end()));
    std::size_t fine_hits = 0, coarse_hits = 0;
    for (const auto& r : test.records) {
        const auto a = assign(model, r.x);
        fine_hits += a.fine_label == r.fine_label;
        coarse_hits += a.coarse_label == r.coarse_label;
        ev.coarse_confusion.add(index_of(r.coarse_label), index_of(a.coarse_label));
        ev.fine_confusion.add(ev.fine_confusion.index(r.fine_label), ev.fine_confusion.index(a.fine_label));
    }
    const double n = static_cast<double>(test.size());
    ev.fine_accuracy = 100.0 * static_cast<double>(fine_hits) / n;
    ev.coarse_accuracy = 100.0 * static_cast<double>(coarse_hits) / n;
    return ev;
}

/// Entries whose own centroid is assigned elsewhere (signature collisions).
inline std::vector<std::size_t> shadowed_entries(const CentroidModel& model) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < model.entries.size(); ++i) {
        if (assign(model, model.entries[i].centroid).entry != i) out.push_back(i);
    }
    return out;
}

inline std::string serialize(const CentroidModel& m) {
    std::string out = "kddids-centroids 1\n";
    out += "stats_id " + (m.stats_id.empty() ? std::string("-") : m.stats_id) + "\n";
    out += "entries " + std::to_string(m.entries.size()) + "\n";
    for (const auto& e : m.entries) {
        write_values(out,
                     "entry " + e.fine_label + " " + std::string(to_string(e.coarse_label)) + " " +
                         std::to_string(e.support) + " " + std::to_string(e.cluster),
                     e.centroid);
    }
    return out;
}

inline CentroidModel parse_centroids(std::string text, const std::string& source) {
    TextReader in(std::move(text), source);
    in.expect_header("kddids-centroids", 1);
    CentroidModel m;
    const auto sid = in.expect("stats_id", 1);
    if (sid[0] != "-") m.stats_id = std::string(sid[0]);
    const auto n = in.to_int<std::size_t>(in.expect("entries", 1)[0]);
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = in.expect("entry", 4 + kFeatureDim);
        if (t.size() != 4 + kFeatureDim) in.fail("expected label, class, support, cluster and 41 coordinates");
        CentroidEntry e;
        e.fine_label = std::string(t[0]);
        const auto c = parse_coarse(t[1]);
        if (!c) in.fail("unknown coarse label '" + std::string(t[1]) + "'");
        e.coarse_label = *c;
        e.support = in.to_int<std::size_t>(t[2]);
        if (e.support == 0) in.fail("entry with zero support");
        e.cluster = in.to_int<std::size_t>(t[3]);
        for (std::size_t j = 0; j < kFeatureDim; ++j) e.centroid[j] = in.to_double(t[4 + j]);
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace kddids::misuse
