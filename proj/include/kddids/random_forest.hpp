#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "kddids/common.hpp"
#include "kddids/dataset.hpp"
#include "kddids/evaluation.hpp"
#include "kddids/labels.hpp"

namespace kddids::rf {

using Counts = std::array<std::uint32_t, kNumClasses>;

/// 1 - sum p_i^2.
inline double gini(const Counts& counts) {
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) throw Error("gini of an empty node");
    double s = 0;
    for (auto c : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        s += p * p;
    }
    return 1.0 - s;
}

/// Internal when `feature >= 0`: x[feature] <= threshold goes left.
/// Leaves hold the class counts of the training samples that reached them.
struct TreeNode {
    std::int32_t feature = -1;
    double threshold = 0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    Counts counts{};

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Majority class of a leaf, ties to the lower class index.
inline CoarseLabel majority(const Counts& counts) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (counts[c] > counts[best]) best = c;
    }
    return class_at(best);
}

/// Nodes in pre-order; nodes[0] is the root.
struct DecisionTree {
    std::vector<TreeNode> nodes;

    const TreeNode& leaf_for(std::span<const double> x) const {
        const TreeNode* n = &nodes.front();
        while (!n->is_leaf()) {
            n = &nodes[x[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right];
        }
        return *n;
    }

    CoarseLabel predict(std::span<const double> x) const { return majority(leaf_for(x).counts); }

    /// Longest root-to-leaf path, in edges.
    std::size_t depth() const {
        std::size_t best = 0;
        std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
        while (!stack.empty()) {
            auto [i, d] = stack.back();
            stack.pop_back();
            best = std::max(best, d);
            if (!nodes[i].is_leaf()) {
                stack.push_back({nodes[i].left, d + 1});
                stack.push_back({nodes[i].right, d + 1});
            }
        }
        return best;
    }

    bool operator==(const DecisionTree&) const = default;
};

struct ForestConfig {
    std::size_t n_trees = 100;
    std::size_t max_depth = 0;  // 0: unbounded
    std::size_t min_samples_split = 2;
    std::size_t features_per_split = 7;  // ceil(sqrt(41))
    std::uint64_t seed = 1;
    /// Cumulative importance mass kept by prune_and_retrain.
    double importance_keep_threshold = 0.99;
    /// Accuracy loss (percentage points) tolerated when pruning features.
    double prune_tolerance = 0.5;
    /// Bootstrap each tree's sample; off only for tests.
    bool bootstrap = true;
    /// Worker threads for tree training; 0 picks the hardware concurrency.
    std::size_t threads = 0;

    void validate() const {
        if (n_trees == 0) throw Error("n_trees must be at least 1");
        if (features_per_split == 0 || features_per_split > kFeatureDim) {
            throw Error("features_per_split must be in 1..41");
        }
        if (min_samples_split < 2) throw Error("min_samples_split must be at least 2");
        if (!(importance_keep_threshold > 0 && importance_keep_threshold <= 1)) {
            throw Error("importance keep threshold must be in (0, 1]");
        }
    }
};

struct ForestModel {
    std::vector<DecisionTree> trees;
    ForestConfig config;
    FeatureVector feature_importances{};
    std::vector<std::size_t> active_features;
    std::string stats_id;

    bool operator==(const ForestModel& o) const {
        return trees == o.trees && feature_importances == o.feature_importances &&
               active_features == o.active_features && stats_id == o.stats_id;
    }
};

/// A tree plus the per-feature weighted impurity decrease it achieved.
struct TrainedTree {
    DecisionTree tree;
    FeatureVector impurity_decrease{};
};

namespace detail {

__extension__ typedef unsigned __int128 u128;

/// Split quality sum_i l_i^2/n_l + sum_i r_i^2/n_r kept as an exact fraction;
/// larger is better (it is n_node * (1 - weighted child gini)).
struct Score {
    u128 num = 0;
    u128 den = 1;

    bool operator>(const Score& o) const { return num * o.den > o.num * den; }
    bool operator==(const Score& o) const { return num * o.den == o.num * den; }
};

inline std::uint64_t sum_sq(const Counts& c) {
    std::uint64_t s = 0;
    for (auto v : c) s += static_cast<std::uint64_t>(v) * v;
    return s;
}

inline Score split_score(const Counts& l, std::uint64_t nl, const Counts& r, std::uint64_t nr) {
    return {static_cast<u128>(sum_sq(l)) * nr + static_cast<u128>(sum_sq(r)) * nl,
            static_cast<u128>(nl) * nr};
}

struct Candidate {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0;
    Score score;
    Counts left{}, right{};
};

inline bool better(const Candidate& c, const Candidate& best) {
    if (!best.found) return true;
    if (c.score > best.score) return true;
    if (!(c.score == best.score)) return false;
    if (c.feature != best.feature) return c.feature < best.feature;
    return c.threshold < best.threshold;
}

}  // namespace detail

/// CART on the sample `indices` of `ds` (repeats allowed), Gini criterion.
/// At each node features are drawn in random order from `active` until
/// `features_per_split` non-constant ones have been searched.
inline TrainedTree train_tree(const Dataset& ds, std::span<const std::size_t> indices,
                              const ForestConfig& config, std::span<const std::size_t> active,
                              Rng& rng) {
    if (indices.empty()) throw Error("cannot train a tree on an empty sample");
    TrainedTree out;
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    std::vector<std::size_t> features(active.begin(), active.end());
    std::vector<std::pair<double, std::uint8_t>> column;
    const double root_n = static_cast<double>(idx.size());

    struct Task {
        std::size_t begin, end, depth;
        std::int64_t parent;  // -1 for the root
        bool is_left;
    };
    std::vector<Task> stack{{0, idx.size(), 0, -1, true}};
    while (!stack.empty()) {
        const Task task = stack.back();
        stack.pop_back();
        const auto node_id = static_cast<std::uint32_t>(out.tree.nodes.size());
        out.tree.nodes.emplace_back();
        if (task.parent >= 0) {
            auto& p = out.tree.nodes[static_cast<std::size_t>(task.parent)];
            (task.is_left ? p.left : p.right) = node_id;
        }

        Counts counts{};
        for (std::size_t i = task.begin; i < task.end; ++i) {
            ++counts[index_of(ds.records[idx[i]].coarse_label)];
        }
        const std::uint64_t n = task.end - task.begin;
        const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
        auto make_leaf = [&] { out.tree.nodes[node_id].counts = counts; };
        if (pure || n < config.min_samples_split ||
            (config.max_depth > 0 && task.depth >= config.max_depth)) {
            make_leaf();
            continue;
        }

        detail::Candidate best;
        std::size_t searched = 0;
        for (std::size_t t = 0; t < features.size() && searched < config.features_per_split; ++t) {
            std::swap(features[t], features[t + uniform_index(rng, features.size() - t)]);
            const std::size_t f = features[t];
            column.clear();
            for (std::size_t i = task.begin; i < task.end; ++i) {
                const auto& r = ds.records[idx[i]];
                column.emplace_back(r.x[f], static_cast<std::uint8_t>(index_of(r.coarse_label)));
            }
            const auto [mn, mx] = std::minmax_element(
                column.begin(), column.end(), [](auto& a, auto& b) { return a.first < b.first; });
            if (mn->first == mx->first) continue;  // constant here; not counted
            ++searched;
            std::sort(column.begin(), column.end());
            Counts left{};
            Counts right = counts;
            for (std::size_t p = 0; p + 1 < column.size(); ++p) {
                ++left[column[p].second];
                --right[column[p].second];
                const double lo = column[p].first;
                const double hi = column[p + 1].first;
                if (lo == hi) continue;
                detail::Candidate c;
                c.found = true;
                c.feature = f;
                c.threshold = lo + (hi - lo) / 2;
                if (!(c.threshold < hi)) c.threshold = lo;
                c.score = detail::split_score(left, p + 1, right, n - p - 1);
                if (detail::better(c, best)) {
                    c.left = left;
                    c.right = right;
                    best = c;
                }
            }
        }
        const detail::Score parent_score{detail::sum_sq(counts), n};
        if (!best.found || !(best.score > parent_score)) {
            make_leaf();
            continue;
        }

        const double nl = static_cast<double>(std::accumulate(best.left.begin(), best.left.end(), 0ULL));
        const double nd = static_cast<double>(n);
        const double weighted_children = (nl / nd) * gini(best.left) + ((nd - nl) / nd) * gini(best.right);
        out.impurity_decrease[best.feature] += (nd / root_n) * (gini(counts) - weighted_children);

        auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(task.begin),
                                  idx.begin() + static_cast<std::ptrdiff_t>(task.end),
                                  [&](std::size_t i) { return ds.records[i].x[best.feature] <= best.threshold; });
        const auto split_at = static_cast<std::size_t>(mid - idx.begin());
        auto& node = out.tree.nodes[node_id];
        node.feature = static_cast<std::int32_t>(best.feature);
        node.threshold = best.threshold;
        // right pushed first so nodes come out in pre-order
        stack.push_back({split_at, task.end, task.depth + 1, node_id, false});
        stack.push_back({task.begin, split_at, task.depth + 1, node_id, true});
    }
    return out;
}

inline std::vector<std::size_t> all_features() {
    std::vector<std::size_t> f(kFeatureDim);
    std::iota(f.begin(), f.end(), 0);
    return f;
}

/// Bagged CART forest. Tree t uses an RNG seeded from (config.seed, t), so
/// the result does not depend on the thread count.
inline ForestModel train_forest(const Dataset& ds, const ForestConfig& config,
                                std::vector<std::size_t> active = all_features()) {
    config.validate();
    if (ds.empty()) throw Error("cannot train a forest on an empty dataset");
    if (active.empty()) throw Error("no active features");
    std::sort(active.begin(), active.end());

    std::vector<TrainedTree> trained(config.n_trees);
    auto build = [&](std::size_t t) {
        Rng rng(derive_seed(config.seed, t));
        std::vector<std::size_t> sample(ds.size());
        if (config.bootstrap) {
            for (auto& s : sample) s = uniform_index(rng, ds.size());
        } else {
            std::iota(sample.begin(), sample.end(), 0);
        }
        trained[t] = train_tree(ds, sample, config, active, rng);
    };
    std::size_t workers = config.threads ? config.threads : std::thread::hardware_concurrency();
    workers = std::clamp<std::size_t>(workers, 1, config.n_trees);
    if (workers == 1) {
        for (std::size_t t = 0; t < config.n_trees; ++t) build(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t t; (t = next.fetch_add(1)) < config.n_trees;) build(t);
            });
        }
    }

    ForestModel model;
    model.config = config;
    model.active_features = std::move(active);
    FeatureVector sum{};
    for (auto& t : trained) {
        for (std::size_t f = 0; f < kFeatureDim; ++f) sum[f] += t.impurity_decrease[f];
        model.trees.push_back(std::move(t.tree));
    }
    const double total = std::accumulate(sum.begin(), sum.end(), 0.0);
    if (total > 0) {
        for (std::size_t f = 0; f < kFeatureDim; ++f) model.feature_importances[f] = sum[f] / total;
    } else {
        // no tree ever split: spread evenly over the active set
        for (auto f : model.active_features) {
            model.feature_importances[f] = 1.0 / static_cast<double>(model.active_features.size());
        }
    }
    return model;
}

struct Vote {
    CoarseLabel label;
    std::array<std::size_t, kNumClasses> votes{};
    std::array<std::uint64_t, kNumClasses> mass{};
};

/// Modal tree vote. Ties go to the larger summed leaf count, then to the
/// lower class index.
inline Vote vote(const ForestModel& model, std::span<const double> x) {
    if (x.size() != kFeatureDim) {
        throw Error("dimension mismatch: expected 41 features, got " + std::to_string(x.size()));
    }
    Vote v{CoarseLabel::normal};
    for (const auto& tree : model.trees) {
        const auto& leaf = tree.leaf_for(x);
        ++v.votes[index_of(majority(leaf.counts))];
        for (std::size_t c = 0; c < kNumClasses; ++c) v.mass[c] += leaf.counts[c];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (v.votes[c] > v.votes[best] || (v.votes[c] == v.votes[best] && v.mass[c] > v.mass[best])) {
            best = c;
        }
    }
    v.label = class_at(best);
    return v;
}

inline CoarseLabel predict(const ForestModel& model, std::span<const double> x) {
    return vote(model, x).label;
}

/// Mean decrease in impurity, normalized to sum to 1.
inline const FeatureVector& feature_importance(const ForestModel& model) {
    return model.feature_importances;
}

inline ConfusionMatrix evaluate(const ForestModel& model, const Dataset& ds) {
    auto m = ConfusionMatrix::coarse();
    for (const auto& r : ds.records) m.add(index_of(r.coarse_label), index_of(predict(model, r.x)));
    return m;
}

/// Smallest importance-ranked prefix covering `threshold` of the mass;
/// features with zero importance are never kept. Sorted ascending.
inline std::vector<std::size_t> select_features(const FeatureVector& importances, double threshold) {
    std::vector<std::size_t> order = all_features();
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return importances[a] > importances[b]; });
    std::vector<std::size_t> keep;
    double cumulative = 0;
    for (auto f : order) {
        if (importances[f] <= 0) break;
        keep.push_back(f);
        cumulative += importances[f];
        if (cumulative >= threshold - 1e-12) break;
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

struct PruneResult {
    ForestModel model;
    bool pruned = false;
    double accuracy_unpruned = 0;  // percent on the validation set
    double accuracy_pruned = 0;
    std::vector<std::size_t> selected;
};

/// Retrains on the features covering the configured importance mass and
/// keeps the retrained forest unless it loses more than
/// `prune_tolerance` points of accuracy on `validation`.
inline PruneResult prune_and_retrain(const Dataset& train, const Dataset& validation,
                                     const ForestModel& model, const ForestConfig& config) {
    PruneResult res;
    res.selected = select_features(model.feature_importances, config.importance_keep_threshold);
    if (res.selected.empty()) res.selected = model.active_features;
    auto retrained = train_forest(train, config, res.selected);
    retrained.stats_id = model.stats_id;
    res.accuracy_unpruned = overall_accuracy(evaluate(model, validation));
    res.accuracy_pruned = overall_accuracy(evaluate(retrained, validation));
    res.pruned = res.accuracy_pruned >= res.accuracy_unpruned - config.prune_tolerance;
    res.model = res.pruned ? std::move(retrained) : model;
    return res;
}

struct FeatureSelectionReport {
    PruneResult prune;
    std::size_t validation_size = 0;
};

/// Full training procedure: the pruning decision is made on a stratified
/// holdout of `ds`, then the chosen feature set is refit on all of `ds`.
inline std::pair<ForestModel, FeatureSelectionReport> train_with_feature_selection(
    const Dataset& ds, const ForestConfig& config, double holdout_fraction = 0.2) {
    FeatureSelectionReport report;
    const auto split = stratified_split(ds, holdout_fraction, derive_seed(config.seed, "holdout"));
    const auto fit = subset(ds, split.train);
    const auto hold = subset(ds, split.validation);
    report.validation_size = hold.size();
    if (hold.empty()) {
        return {train_forest(ds, config), report};
    }
    const auto initial = train_forest(fit, config);
    report.prune = prune_and_retrain(fit, hold, initial, config);
    auto final_model = train_forest(ds, config, report.prune.model.active_features);
    return {std::move(final_model), std::move(report)};
}

inline std::string serialize(const ForestModel& m) {
    const auto& c = m.config;
    std::string out = "kddids-forest 1\n";
    out += "stats_id " + (m.stats_id.empty() ? std::string("-") : m.stats_id) + "\n";
    out += "config n_trees " + std::to_string(c.n_trees) + " max_depth " +
           std::to_string(c.max_depth) + " min_samples_split " +
           std::to_string(c.min_samples_split) + " features_per_split " +
           std::to_string(c.features_per_split) + " seed " + std::to_string(c.seed) + " keep " +
           format_double(c.importance_keep_threshold) + " prune_tolerance " +
           format_double(c.prune_tolerance) + " bootstrap " + (c.bootstrap ? "1" : "0") + "\n";
    write_values(out, "importances", m.feature_importances);
    out += "active " + std::to_string(m.active_features.size());
    for (auto f : m.active_features) out += " " + std::to_string(f);
    out += "\ntrees " + std::to_string(m.trees.size()) + "\n";
    for (std::size_t t = 0; t < m.trees.size(); ++t) {
        out += "tree " + std::to_string(t) + " " + std::to_string(m.trees[t].nodes.size()) + "\n";
        for (const auto& n : m.trees[t].nodes) {
            if (n.is_leaf()) {
                out += "L";
                for (auto v : n.counts) out += " " + std::to_string(v);
            } else {
                out += "I " + std::to_string(n.feature) + " " + format_double(n.threshold);
            }
            out += '\n';
        }
    }
    return out;
}

inline ForestModel parse_forest(std::string text, const std::string& source) {
    TextReader in(std::move(text), source);
    in.expect_header("kddids-forest", 1);
    ForestModel m;
    const auto sid = in.expect("stats_id", 1);
    if (sid[0] != "-") m.stats_id = std::string(sid[0]);
    const auto cfg = in.expect("config");
    if (cfg.size() % 2 != 0) in.fail("malformed config line");
    for (std::size_t i = 0; i < cfg.size(); i += 2) {
        const auto key = cfg[i];
        const auto val = cfg[i + 1];
        auto& c = m.config;
        if (key == "n_trees") c.n_trees = in.to_int<std::size_t>(val);
        else if (key == "max_depth") c.max_depth = in.to_int<std::size_t>(val);
        else if (key == "min_samples_split") c.min_samples_split = in.to_int<std::size_t>(val);
        else if (key == "features_per_split") c.features_per_split = in.to_int<std::size_t>(val);
        else if (key == "seed") c.seed = in.to_int<std::uint64_t>(val);
        else if (key == "keep") c.importance_keep_threshold = in.to_double(val);
        else if (key == "prune_tolerance") c.prune_tolerance = in.to_double(val);
        else if (key == "bootstrap") c.bootstrap = val == "1";
        else in.fail("unknown config key '" + std::string(key) + "'");
    }
    const auto imp = in.doubles("importances", kFeatureDim);
    std::copy(imp.begin(), imp.end(), m.feature_importances.begin());
    const auto act = in.expect("active", 1);
    const auto n_active = in.to_int<std::size_t>(act[0]);
    if (act.size() != n_active + 1) in.fail("active feature count mismatch");
    for (std::size_t i = 1; i < act.size(); ++i) {
        const auto f = in.to_int<std::size_t>(act[i]);
        if (f >= kFeatureDim) in.fail("active feature out of range");
        m.active_features.push_back(f);
    }
    const auto n_trees = in.to_int<std::size_t>(in.expect("trees", 1)[0]);
    for (std::size_t t = 0; t < n_trees; ++t) {
        const auto head = in.expect("tree", 2);
        if (in.to_int<std::size_t>(head[0]) != t) in.fail("trees out of order");
        const auto n_nodes = in.to_int<std::size_t>(head[1]);
        DecisionTree tree;
        // internal nodes whose right child is still pending
        std::vector<std::uint32_t> pending;
        bool expect_left = false;
        for (std::size_t k = 0; k < n_nodes; ++k) {
            const auto tok = in.tokens();
            const auto id = static_cast<std::uint32_t>(tree.nodes.size());
            if (k > 0) {
                if (expect_left) {
                    tree.nodes[pending.back()].left = id;
                } else {
                    if (pending.empty()) in.fail("tree has more nodes than its structure allows");
                    tree.nodes[pending.back()].right = id;
                    pending.pop_back();
                }
            }
            TreeNode node;
            if (tok.size() == 3 && tok[0] == "I") {
                node.feature = in.to_int<std::int32_t>(tok[1]);
                if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= kFeatureDim) {
                    in.fail("split feature out of range");
                }
                node.threshold = in.to_double(tok[2]);
                tree.nodes.push_back(node);
                pending.push_back(id);
                expect_left = true;
            } else if (tok.size() == kNumClasses + 1 && tok[0] == "L") {
                std::uint64_t sum = 0;
                for (std::size_t c = 0; c < kNumClasses; ++c) {
                    node.counts[c] = in.to_int<std::uint32_t>(tok[c + 1]);
                    sum += node.counts[c];
                }
                if (sum == 0) in.fail("leaf with no samples");
                tree.nodes.push_back(node);
                expect_left = false;
            } else {
                in.fail("expected 'I <feature> <threshold>' or 'L <5 counts>'");
            }
        }
        if (!pending.empty() || tree.nodes.empty()) in.fail("truncated tree");
        m.trees.push_back(std::move(tree));
    }
    return m;
}

}  // namespace kddids::rf
