#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "tfe/bench.hpp"
#include "tfe/rng.hpp"

using namespace tfe::bench;

TEST_CASE("many-class benchmark keeps 100 bins at diamonds scale") {
    // 53,940 continuous values with far more than 100 distinct quantile
    // positions: every Dirichlet(5)-spaced bin holds >= 10 samples.
    tfe::CounterRng rng(1, 0);
    std::vector<double> y(53940);
    for (double& v : y) v = std::exp(rng.normal(0.0, 1.0));
    std::size_t k_out = 0;
    const auto labels = build_many_class_benchmark(y, 100, 5.0, 10, 7, &k_out);
    CHECK(k_out == 100);  // merged == 100 - k_out == 0

    std::map<std::uint32_t, std::size_t> counts;
    for (auto l : labels) ++counts[l];
    CHECK(counts.size() == 100);
    for (const auto& [label, count] : counts) {
        CHECK(label < 100);
        CHECK(count >= 10);
    }
}

TEST_CASE("many-class benchmark merges small bins") {
    tfe::CounterRng rng(2, 0);
    std::vector<double> y(50);
    for (double& v : y) v = rng.normal();
    std::size_t k_out = 0;
    const auto labels = build_many_class_benchmark(y, 100, 5.0, 10, 8, &k_out);
    CHECK(k_out >= 1);
    CHECK(k_out <= 5);  // 50 rows cannot fill more than 5 bins of 10

    std::map<std::uint32_t, std::size_t> counts;
    for (auto l : labels) ++counts[l];
    CHECK(counts.size() == k_out);
    for (const auto& [label, count] : counts) {
        CHECK(label < k_out);  // contiguous ids
        CHECK(count >= 10);
    }
}

TEST_CASE("merged count identity holds across sizes") {
    tfe::CounterRng rng(3, 0);
    for (std::size_t n : {std::size_t(80), std::size_t(500), std::size_t(4000)}) {
        std::vector<double> y(n);
        for (double& v : y) v = rng.normal();
        std::size_t k_out = 0;
        const auto labels = build_many_class_benchmark(y, 100, 5.0, 10, 9, &k_out);
        std::set<std::uint32_t> distinct(labels.begin(), labels.end());
        CHECK(distinct.size() == k_out);
        // merged = 100 - K' by construction; every surviving id is used
        CHECK(*distinct.rbegin() == k_out - 1);
    }
}

TEST_CASE("label permutation removes the ordinal structure") {
    // With permutation, label order should not follow target order for at
    // least one adjacent pair (checked across seeds to avoid flakiness).
    std::vector<double> y(2000);
    tfe::CounterRng rng(4, 0);
    for (double& v : y) v = rng.normal();
    bool saw_disorder = false;
    for (std::uint64_t seed = 0; seed < 4 && !saw_disorder; ++seed) {
        std::size_t k_out = 0;
        const auto labels = build_many_class_benchmark(y, 20, 5.0, 10, seed, &k_out);
        // Mean target per label: if ordinal, means would be sorted by label.
        std::vector<double> mean(k_out, 0.0);
        std::vector<std::size_t> count(k_out, 0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            mean[labels[i]] += y[i];
            ++count[labels[i]];
        }
        for (std::size_t b = 0; b < k_out; ++b) mean[b] /= static_cast<double>(count[b]);
        saw_disorder = !std::is_sorted(mean.begin(), mean.end());
    }
    CHECK(saw_disorder);
}

TEST_CASE("empty targets are rejected") {
    CHECK_THROWS_AS(build_many_class_benchmark({}, 100, 5.0, 10, 1), tfe::DimError);
}

TEST_CASE("normalize_scores maps higher-better onto [0,1]") {
    const std::vector<ScoreRecord> records{
        {"d", 0, "a", 0.6},
        {"d", 0, "b", 0.9},
    };
    const auto out = normalize_scores(records, false);
    CHECK(out[0] == doctest::Approx(0.0));
    CHECK(out[1] == doctest::Approx(1.0));
}

TEST_CASE("normalize_scores flips lower-better metrics") {
    const std::vector<ScoreRecord> records{
        {"d", 0, "a", 2.0},
        {"d", 0, "b", 4.0},
    };
    const auto out = normalize_scores(records, true);
    CHECK(out[0] == doctest::Approx(1.0));
    CHECK(out[1] == doctest::Approx(0.0));
}

TEST_CASE("normalize_scores three-model case") {
    const std::vector<ScoreRecord> records{
        {"d", 0, "a", 1.0},
        {"d", 0, "b", 2.0},
        {"d", 0, "c", 4.0},
    };
    const auto out = normalize_scores(records, false);
    CHECK(out[0] == doctest::Approx(0.0));
    CHECK(out[1] == doctest::Approx(1.0 / 3.0));
    CHECK(out[2] == doctest::Approx(1.0));
}

TEST_CASE("normalize_scores handles degenerate groups and multiple folds") {
    const std::vector<ScoreRecord> records{
        {"d", 0, "a", 3.0},
        {"d", 0, "b", 3.0},
        {"d", 1, "a", 0.1},
        {"d", 1, "b", 0.7},
        {"e", 0, "a", 10.0},
        {"e", 0, "b", 30.0},
    };
    const auto out = normalize_scores(records, false);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(0.5));
    CHECK(out[2] == doctest::Approx(0.0));
    CHECK(out[3] == doctest::Approx(1.0));
    CHECK(out[4] == doctest::Approx(0.0));
    CHECK(out[5] == doctest::Approx(1.0));
    for (double v : out) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // Exactly one model per non-degenerate group reaches 1.
    CHECK((out[2] == 1.0) + (out[3] == 1.0) == 1);
}

TEST_CASE("improvability formula and bounds") {
    CHECK(improvability(0.5, 0.5) == doctest::Approx(0.0));
    CHECK(improvability(2.0, 1.0) == doctest::Approx(50.0));
    CHECK(improvability(0.25, 0.20) == doctest::Approx(20.0));
    CHECK(improvability(1000.0, 0.001) < 100.0);
    CHECK_THROWS_AS(improvability(0.1, 0.2), tfe::DimError);
    CHECK_THROWS_AS(improvability(0.1, 0.0), tfe::DimError);
}

TEST_CASE("bench csv formatting") {
    BenchRecord rec{512, 100, 9, "chunked", 12.5, 40960, 7};
    CHECK(bench_csv_header() == "n_train,n_test,n_features,mode,wall_ms,peak_bytes,seed");
    CHECK(bench_csv_row(rec) == "512,100,9,chunked,12.500,40960,7");
}

TEST_CASE("median timing is positive") {
    int counter = 0;
    const double ms = time_median_ms(1, 3, [&] {
        volatile int sink = 0;
        for (int i = 0; i < 10000; ++i) sink = i;
        ++counter;
    });
    CHECK(counter == 4);
    CHECK(ms >= 0.0);
}
