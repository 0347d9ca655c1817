#include <gtest/gtest.h>

#include <cmath>

#include "kddids/misuse_centroids.hpp"
#include "support/oracles.hpp"
#include "support/synthetic_kdd.hpp"

using namespace kddids;

namespace {

EncodedRecord point(const std::string& fine, CoarseLabel coarse, std::initializer_list<double> head) {
    EncodedRecord r;
    std::copy(head.begin(), head.end(), r.x.begin());
    r.fine_label = fine;
    r.coarse_label = coarse;
    return r;
}

Dataset standardized_synthetic(std::uint64_t seed) {
    const auto raw = synth::synthetic_dataset(synth::default_mix(), seed);
    return standardize(raw, standardize_fit(raw));
}

}  // namespace

TEST(Fit, SinglePointIsItsOwnCentroid) {
    Dataset ds;
    ds.records.push_back(point("smurf", CoarseLabel::dos, {1.5, -2, 3}));
    const auto m = misuse::fit(ds);
    ASSERT_EQ(m.entries.size(), 1u);
    EXPECT_EQ(m.entries[0].centroid, ds.records[0].x);
    EXPECT_EQ(m.entries[0].support, 1u);
}

TEST(Fit, TwoPointsGiveTheMidpoint) {
    Dataset ds;
    ds.records.push_back(point("neptune", CoarseLabel::dos, {0, 4}));
    ds.records.push_back(point("neptune", CoarseLabel::dos, {2, 0}));
    const auto m = misuse::fit(ds);
    ASSERT_EQ(m.entries.size(), 1u);
    EXPECT_DOUBLE_EQ(m.entries[0].centroid[0], 1.0);
    EXPECT_DOUBLE_EQ(m.entries[0].centroid[1], 2.0);
    EXPECT_DOUBLE_EQ(m.entries[0].centroid[2], 0.0);
}

TEST(Fit, MatchesBruteForceMeans) {
    const auto ds = standardized_synthetic(2);
    const auto m = misuse::fit(ds);
    const auto means = synth::label_means(ds);
    ASSERT_EQ(m.entries.size(), means.size());
    EXPECT_EQ(m.label_count(), 23u);
    for (const auto& e : m.entries) {
        const auto& ref = means.at(e.fine_label);
        for (std::size_t j = 0; j < kFeatureDim; ++j) ASSERT_NEAR(e.centroid[j], ref[j], 1e-9) << e.fine_label;
    }
}

TEST(Fit, RejectsEmptyAndInconsistentData) {
    EXPECT_THROW(misuse::fit(Dataset{}), Error);
    Dataset ds;
    ds.records.push_back(point("x", CoarseLabel::dos, {0}));
    ds.records.push_back(point("x", CoarseLabel::probe, {1}));
    EXPECT_THROW(misuse::fit(ds), Error);
}

TEST(Assign, MatchesExhaustiveScan) {
    const auto m = misuse::fit(standardized_synthetic(3));
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x(41);
        for (auto& v : x) v = 4.0 * (uniform_unit(rng) - 0.5);
        std::size_t best = 0;
        double bd = 1e300;
        for (std::size_t e = 0; e < m.entries.size(); ++e) {
            double d = 0;
            for (std::size_t j = 0; j < 41; ++j) d += (x[j] - m.entries[e].centroid[j]) * (x[j] - m.entries[e].centroid[j]);
            if (d < bd) {
                bd = d;
                best = e;
            }
        }
        const auto a = misuse::assign(m, x);
        ASSERT_EQ(a.entry, best);
        ASSERT_NEAR(a.distance, std::sqrt(bd), 1e-9);
    }
}

TEST(Assign, ExactTiesGoToFirstEntry) {
    Dataset ds;
    ds.records.push_back(point("b_label", CoarseLabel::probe, {1}));
    ds.records.push_back(point("a_label", CoarseLabel::dos, {-1}));
    const auto m = misuse::fit(ds);
    ASSERT_EQ(m.entries[0].fine_label, "a_label");
    const std::vector<double> origin(41, 0.0);
    EXPECT_EQ(misuse::assign(m, origin).fine_label, "a_label");
}

TEST(Assign, AttacksOnlySkipsNormal) {
    Dataset ds;
    ds.records.push_back(point("normal", CoarseLabel::normal, {0}));
    ds.records.push_back(point("satan", CoarseLabel::probe, {10}));
    const auto m = misuse::fit(ds);
    const std::vector<double> x(41, 0.0);
    EXPECT_EQ(misuse::verify_alarm(m, x), CoarseLabel::normal);
    EXPECT_EQ(misuse::assign(m, x, true).coarse_label, CoarseLabel::probe);

    Dataset only_normal;
    only_normal.records.push_back(point("normal", CoarseLabel::normal, {0}));
    EXPECT_THROW(misuse::assign(misuse::fit(only_normal), x, true), Error);
    EXPECT_THROW(misuse::assign(m, std::vector<double>(3)), Error);
}

TEST(Evaluate, CentroidsClassifyThemselves) {
    const auto m = misuse::fit(standardized_synthetic(4));
    Dataset probes;
    for (const auto& e : m.entries) {
        EncodedRecord r;
        r.x = e.centroid;
        r.fine_label = e.fine_label;
        r.coarse_label = e.coarse_label;
        probes.records.push_back(r);
    }
    ASSERT_TRUE(misuse::shadowed_entries(m).empty());
    const auto ev = misuse::evaluate_misuse(m, probes);
    EXPECT_DOUBLE_EQ(ev.fine_accuracy, 100.0);
    EXPECT_DOUBLE_EQ(ev.coarse_accuracy, 100.0);
}

TEST(Evaluate, CoarseAccuracyAtLeastFine) {
    for (std::uint64_t seed = 5; seed < 10; ++seed) {
        const auto train = standardized_synthetic(seed);
        const auto m = misuse::fit(train);
        const auto ev = misuse::evaluate_misuse(m, train);
        EXPECT_GE(ev.coarse_accuracy, ev.fine_accuracy);
        EXPECT_EQ(ev.coarse_confusion.total(), train.size());
        EXPECT_EQ(ev.fine_confusion.total(), train.size());
        EXPECT_NEAR(overall_accuracy(ev.coarse_confusion), ev.coarse_accuracy, 1e-9);
        EXPECT_NEAR(overall_accuracy(ev.fine_confusion), ev.fine_accuracy, 1e-9);
    }
}

TEST(Evaluate, UnseenTestLabelCountsAsMiss) {
    Dataset train, test;
    train.records.push_back(point("smurf", CoarseLabel::dos, {0}));
    test.records.push_back(point("teardrop", CoarseLabel::dos, {0}));
    const auto ev = misuse::evaluate_misuse(misuse::fit(train), test);
    EXPECT_DOUBLE_EQ(ev.fine_accuracy, 0.0);
    EXPECT_DOUBLE_EQ(ev.coarse_accuracy, 100.0);
}

// Means commute with the affine standardization map.
TEST(Fit, ConsistentUnderStandardization) {
    const auto raw = synth::synthetic_dataset(synth::default_mix(), 6);
    const auto stats = standardize_fit(raw);
    const auto std_model = misuse::fit(standardize(raw, stats));
    const auto raw_model = misuse::fit(raw);
    ASSERT_EQ(std_model.entries.size(), raw_model.entries.size());
    for (std::size_t i = 0; i < raw_model.entries.size(); ++i) {
        const auto mapped = standardize_apply(stats, raw_model.entries[i].centroid);
        for (std::size_t j = 0; j < kFeatureDim; ++j) {
            ASSERT_NEAR(mapped[j], std_model.entries[i].centroid[j], 1e-9);
        }
    }
}

TEST(Clusters, SeveralPerLabel) {
    Dataset ds;
    // two tight blobs under one label
    Rng rng(2);
    for (int i = 0; i < 40; ++i) {
        const double c = i % 2 ? 5.0 : -5.0;
        ds.records.push_back(point("back", CoarseLabel::dos, {c + 0.1 * uniform_unit(rng), 0}));
    }
    ds.records.push_back(point("normal", CoarseLabel::normal, {0, 0}));
    misuse::MisuseConfig config;
    config.clusters_per_label = 2;
    config.seed = 3;
    const auto m = misuse::fit(ds, config);
    EXPECT_EQ(m.label_count(), 2u);
    ASSERT_EQ(m.entries.size(), 3u);  // the lone normal point yields one cluster
    EXPECT_EQ(m.entries[0].support + m.entries[1].support, 40u);
    EXPECT_NEAR(std::abs(m.entries[0].centroid[0]), 5.05, 0.05);
    EXPECT_NEAR(m.entries[0].centroid[0], -m.entries[1].centroid[0], 0.1);
    EXPECT_EQ(misuse::fit(ds, config), m);
}

TEST(Serialization, RoundTripsExactly) {
    auto m = misuse::fit(standardized_synthetic(7));
    m.stats_id = "ff00";
    const auto text = misuse::serialize(m);
    const auto back = misuse::parse_centroids(text, "mem");
    EXPECT_EQ(back, m);
    EXPECT_EQ(misuse::serialize(back), text);
}

TEST(Serialization, RejectsCorruptFiles) {
    const auto text = misuse::serialize(misuse::fit(standardized_synthetic(8)));
    auto bad = text;
    bad.replace(bad.find(" dos "), 5, " xyz ");
    EXPECT_THROW(misuse::parse_centroids(bad, "mem"), FormatError);
    EXPECT_THROW(misuse::parse_centroids(text.substr(0, text.size() / 2), "mem"), FormatError);
}
