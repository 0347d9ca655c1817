#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "kddids/common.hpp"
#include "kddids/dataset.hpp"
#include "kddids/hybrid_pipeline.hpp"
#include "kddids/labels.hpp"

namespace kddids {

inline constexpr std::uint64_t kDefaultSeed = 1999;

/// Everything a command needs, read from a flat key=value file.
///
///   seed=1999
///   test_fraction=0.3
///   sample.normal=39524        (also sample.rtl as an alias of sample.r2l)
///   taxonomy.saint=probe
///   nn.hidden=64,32  nn.learning_rate  nn.epochs  nn.batch_size  nn.folds
///   rf.trees  rf.max_depth  rf.min_samples_split  rf.features_per_split
///   rf.keep  rf.prune  rf.prune_tolerance  rf.threads
///   misuse.clusters
///   mode=verify|classify
///
/// Component seeds are derived from `seed`; see component_seed().
struct RunConfig {
    std::uint64_t seed = kDefaultSeed;
    std::optional<std::filesystem::path> input;
    std::optional<std::filesystem::path> out;
    double test_fraction = 0.3;
    ClassCounts sample_targets = SamplingPlan::table_one(0).target;
    Taxonomy taxonomy = Taxonomy::kdd_default();
    std::size_t nn_folds = 2;
    hybrid::HybridConfig models;

    std::uint64_t component_seed(std::string_view component) const {
        return derive_seed(seed, component);
    }

    SamplingPlan sampling_plan() const { return {sample_targets, component_seed("resample")}; }

    /// Model configs with their seeds filled in from the root seed.
    hybrid::HybridConfig seeded_models() const {
        auto m = models;
        m.nn.seed = component_seed("nn");
        m.rf.seed = component_seed("rf");
        m.misuse.seed = component_seed("misuse");
        return m;
    }

    void set(std::string_view key, std::string_view value, const std::string& where) {
        auto bad = [&](const std::string& why) -> Error {
            return Error(where + ": " + std::string(key) + ": " + why);
        };
        auto as_size = [&] {
            std::size_t v = 0;
            if (!parse_integer(value, v)) throw bad("expected a non-negative integer");
            return v;
        };
        auto as_double = [&] {
            double v = 0;
            if (!parse_double(value, v)) throw bad("expected a number");
            return v;
        };
        auto as_bool = [&] {
            if (value == "1" || value == "true" || value == "yes") return true;
            if (value == "0" || value == "false" || value == "no") return false;
            throw bad("expected true/false");
        };

        if (key == "seed") {
            if (!parse_integer(value, seed)) throw bad("expected an unsigned integer");
        } else if (key == "input") {
            input = std::filesystem::path(value);
        } else if (key == "out") {
            out = std::filesystem::path(value);
        } else if (key == "test_fraction") {
            test_fraction = as_double();
            if (!(test_fraction > 0 && test_fraction < 1)) throw bad("must be in (0, 1)");
        } else if (key.starts_with("sample.")) {
            const auto c = parse_coarse(key.substr(7));
            if (!c) throw bad("unknown class");
            sample_targets[index_of(*c)] = as_size();
        } else if (key.starts_with("taxonomy.")) {
            const auto c = parse_coarse(value);
            if (!c || key.size() == 9) throw bad("expected taxonomy.<label>=<class>");
            taxonomy.add(std::string(key.substr(9)), *c);
        } else if (key == "mode") {
            const auto m = hybrid::parse_mode(value);
            if (!m) throw bad("expected verify or classify");
            models.mode = *m;
        } else if (key == "nn.hidden") {
            models.nn.hidden_dims.clear();
            for (auto part : split(value, ',')) {
                std::size_t h = 0;
                if (!parse_integer(trim(part), h) || h == 0) throw bad("expected positive sizes like 64,32");
                models.nn.hidden_dims.push_back(h);
            }
        } else if (key == "nn.learning_rate") {
            models.nn.learning_rate = as_double();
        } else if (key == "nn.epochs") {
            models.nn.epochs = as_size();
        } else if (key == "nn.batch_size") {
            models.nn.batch_size = as_size();
        } else if (key == "nn.folds") {
            nn_folds = as_size();
        } else if (key == "rf.trees") {
            models.rf.n_trees = as_size();
        } else if (key == "rf.max_depth") {
            models.rf.max_depth = as_size();
        } else if (key == "rf.min_samples_split") {
            models.rf.min_samples_split = as_size();
        } else if (key == "rf.features_per_split") {
            models.rf.features_per_split = as_size();
        } else if (key == "rf.keep") {
            models.rf.importance_keep_threshold = as_double();
        } else if (key == "rf.prune") {
            models.prune_forest = as_bool();
        } else if (key == "rf.prune_tolerance") {
            models.rf.prune_tolerance = as_double();
        } else if (key == "rf.threads") {
            models.rf.threads = as_size();
        } else if (key == "misuse.clusters") {
            models.misuse.clusters_per_label = as_size();
        } else {
            throw bad("unknown key");
        }
    }

    void validate() const {
        models.nn.validate();
        models.rf.validate();
        if (nn_folds < 2) throw Error("nn.folds must be at least 2");
        if (models.misuse.clusters_per_label == 0) throw Error("misuse.clusters must be at least 1");
    }

    static RunConfig parse(std::string_view text, const std::string& source) {
        RunConfig c;
        std::size_t line_no = 0;
        for (auto line : split(text, '\n')) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            const std::string where = source + ":" + std::to_string(line_no);
            if (eq == std::string_view::npos) throw Error(where + ": expected key=value");
            c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
        }
        c.validate();
        return c;
    }

    static RunConfig load(const std::filesystem::path& path) {
        return parse(read_file(path), path.string());
    }

    /// Header line stamped on every report.
    std::string seed_banner() const {
        return "seed=" + std::to_string(seed) + " resample=" + std::to_string(component_seed("resample")) +
               " split=" + std::to_string(component_seed("split")) +
               " nn=" + std::to_string(component_seed("nn")) +
               " cv=" + std::to_string(component_seed("cv")) +
               " rf=" + std::to_string(component_seed("rf")) +
               " misuse=" + std::to_string(component_seed("misuse"));
    }
};

}  // namespace kddids
