#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "tfe/preprocess.hpp"
#include "tfe/rng.hpp"
#include "tfe/scm.hpp"

using namespace tfe::prep;

TEST_CASE("single estimator sees every feature") {
    const auto configs = build_estimator_configs(1, 5, 200, 3);
    REQUIRE(configs.size() == 1);
    CHECK(configs[0].feature_subset == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("round-robin subsets cover the full feature set") {
    const auto configs = build_estimator_configs(2, 300, 200, 5);
    std::set<std::size_t> covered;
    for (const auto& cfg : configs) {
        CHECK(cfg.feature_subset.size() == 200);
        CHECK(std::is_sorted(cfg.feature_subset.begin(), cfg.feature_subset.end()));
        covered.insert(cfg.feature_subset.begin(), cfg.feature_subset.end());
    }
    CHECK(covered.size() == 300);
}

TEST_CASE("transforms alternate and every second estimator uses svd") {
    const auto configs = build_estimator_configs(8, 20, 200, 7);
    std::size_t n_svd = 0;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        CHECK(configs[i].transform ==
              (i % 2 == 0 ? Transform::robust_softclip : Transform::quantile_standard));
        n_svd += configs[i].use_svd ? 1 : 0;
    }
    CHECK(n_svd == 4);
}

TEST_CASE("importance ordering front-loads informative features") {
    std::vector<double> importance(10, 0.0);
    importance[4] = 3.0;
    importance[9] = 2.0;
    const auto configs = build_estimator_configs(2, 10, 3, 11, importance);
    // Estimator 0 reads the top of the importance ordering.
    CHECK(std::find(configs[0].feature_subset.begin(), configs[0].feature_subset.end(), 4) !=
          configs[0].feature_subset.end());
    CHECK(std::find(configs[0].feature_subset.begin(), configs[0].feature_subset.end(), 9) !=
          configs[0].feature_subset.end());
}

TEST_CASE("config serialization is deterministic text") {
    const auto configs = build_estimator_configs(2, 4, 200, 9);
    const std::string text = serialize_configs(configs);
    CHECK(text == serialize_configs(configs));
    CHECK(text.find("estimator=0") != std::string::npos);
    CHECK(text.find("transform=robust_softclip") != std::string::npos);
    CHECK(text.find("features=0,1,2,3") != std::string::npos);
}

TEST_CASE("robust scale softclip matches the direct formula") {
    const std::vector<double> col{1.0, 2.0, 3.0};
    const auto out = robust_scale_softclip(col);
    // median 2, IQR 1 -> pre-clip [-1, 0, 1]; tanh clip moves values < 0.06.
    CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out[0] == doctest::Approx(4.0 * std::tanh(-0.25)).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(4.0 * std::tanh(0.25)).epsilon(1e-12));
    CHECK(std::abs(out[0] - (-1.0)) < 0.06);
    CHECK(std::abs(out[2] - 1.0) < 0.06);
}

TEST_CASE("robust scale on a constant column returns zeros") {
    const std::vector<double> col{5.0, 5.0, 5.0, 5.0};
    for (double v : robust_scale_softclip(col)) CHECK(v == 0.0);
}

TEST_CASE("robust scale bounds an extreme outlier") {
    // tanh saturates to 1.0 in double for huge inputs, so the bound is closed
    // at the float level even though the function's range is open.
    std::vector<double> col{0.1, 0.2, 0.3, 0.4, 1e6};
    for (double v : robust_scale_softclip(col)) {
        CHECK(v >= -4.0);
        CHECK(v <= 4.0);
    }
    CHECK(robust_scale_softclip(col)[0] > -4.0);
}

TEST_CASE("robust scale preserves sort order") {
    std::mt19937_64 rng(24);
    auto col = oracle::random_vec(rng, 60, -50, 50);
    const auto out = robust_scale_softclip(col);
    std::vector<std::size_t> idx(col.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto by_in = idx, by_out = idx;
    std::stable_sort(by_in.begin(), by_in.end(),
                     [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
    std::stable_sort(by_out.begin(), by_out.end(),
                     [&](std::size_t a, std::size_t b) { return out[a] < out[b]; });
    CHECK(by_in == by_out);
}

TEST_CASE("robust scale propagates missing cells and rejects all-missing") {
    const double nan = std::nan("");
    const std::vector<double> col{1.0, nan, 3.0};
    const auto out = robust_scale_softclip(col);
    CHECK(std::isnan(out[1]));
    CHECK(!std::isnan(out[0]));
    const std::vector<double> all_missing{nan, nan};
    CHECK_THROWS_AS(robust_scale_softclip(all_missing), tfe::ConfigError);
}

TEST_CASE("quantile transform of symmetric ranks has median zero") {
    std::vector<double> col(99);
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = static_cast<double>(i) * 0.5;
    auto out = quantile_standard_transform(col);
    std::sort(out.begin(), out.end());
    CHECK(std::abs(out[49]) < 1e-9);
}

TEST_CASE("two-value column maps to symmetric quantiles") {
    const std::vector<double> col{-3.0, 7.0};
    const auto out = quantile_standard_transform(col);
    CHECK(out[0] == doctest::Approx(-out[1]).epsilon(1e-9));
    CHECK(out[0] < 0.0);
}

TEST_CASE("quantile transform preserves sort order") {
    std::mt19937_64 rng(21);
    auto col = oracle::random_vec(rng, 50, -10, 10);
    const auto out = quantile_standard_transform(col);
    std::vector<std::size_t> idx(col.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto by_in = idx, by_out = idx;
    std::stable_sort(by_in.begin(), by_in.end(),
                     [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
    std::stable_sort(by_out.begin(), by_out.end(),
                     [&](std::size_t a, std::size_t b) { return out[a] < out[b]; });
    CHECK(by_in == by_out);

    double mean = 0;
    for (double v : out) mean += v;
    mean /= static_cast<double>(out.size());
    CHECK(std::abs(mean) < 1e-9);
}

TEST_CASE("constant column quantile transform is all zeros") {
    const std::vector<double> col{2.0, 2.0, 2.0};
    for (double v : quantile_standard_transform(col)) CHECK(v == 0.0);
}

TEST_CASE("svd augment recovers the scores of a rank-1 matrix") {
    std::mt19937_64 rng(22);
    const std::size_t n = 30, f = 5;
    const auto u = oracle::random_vec(rng, n);
    const auto v = oracle::random_vec(rng, f);
    std::vector<double> x(n * f);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) x[i * f + j] = u[i] * v[j];
    }
    std::size_t k_out = 0;
    const auto aug = svd_augment(x, n, f, 1, &k_out);
    REQUIRE(k_out == 1);
    // Appended column correlates with u up to sign.
    double su = 0, ss = 0, suu = 0, sss = 0, cross = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double score = aug[i * (f + 1) + f];
        su += u[i];
        ss += score;
        suu += u[i] * u[i];
        sss += score * score;
        cross += u[i] * score;
    }
    const double nn = static_cast<double>(n);
    const double corr = (cross - su * ss / nn) /
                        std::sqrt((suu - su * su / nn) * (sss - ss * ss / nn));
    CHECK(std::abs(corr) > 0.999);
    // Original columns unchanged.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) CHECK(aug[i * (f + 1) + j] == x[i * f + j]);
    }
}

TEST_CASE("svd augment with k=0 is a no-op") {
    const std::vector<double> x{1, 2, 3, 4};
    std::size_t k_out = 99;
    CHECK(svd_augment(x, 2, 2, 0, &k_out) == x);
    CHECK(k_out == 0);
}

TEST_CASE("svd scores of orthogonal columns have a diagonal Gram matrix") {
    // Columns along distinct axes are exactly orthogonal.
    const std::size_t n = 6, f = 3;
    std::vector<double> x(n * f, 0.0);
    x[0 * f + 0] = 2.0;
    x[1 * f + 0] = -2.0;
    x[2 * f + 1] = 1.0;
    x[3 * f + 1] = 1.0;
    x[4 * f + 2] = 0.5;
    x[5 * f + 2] = -0.25;
    std::size_t k_out = 0;
    const auto aug = svd_augment(x, n, f, 2, &k_out);
    REQUIRE(k_out == 2);
    double g01 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        g01 += aug[i * (f + 2) + f] * aug[i * (f + 2) + f + 1];
    }
    CHECK(std::abs(g01) < 1e-8);
}

TEST_CASE("jacobi svd reproduces the matrix") {
    std::mt19937_64 rng(23);
    const std::size_t n = 12, f = 4;
    const auto x = oracle::random_vec(rng, n * f);
    const auto svd = jacobi_svd(x, n, f, f);
    REQUIRE(svd.singular_values.size() == f);
    for (std::size_t j = 1; j < f; ++j) {
        CHECK(svd.singular_values[j - 1] >= svd.singular_values[j]);
    }
    // scores * right_vectors^T == x
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < f; ++c) {
            double acc = 0;
            for (std::size_t j = 0; j < f; ++j) {
                acc += svd.scores[i * f + j] * svd.right_vectors[j * f + c];
            }
            CHECK(acc == doctest::Approx(x[i * f + c]).epsilon(1e-9));
        }
    }
}

TEST_CASE("gini importance is maximal for a feature equal to the target") {
    tfe::CounterRng rng(31, 0);
    const std::size_t n = 200, f = 4;
    std::vector<double> x(n * f), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<double>(i % 2);
        x[i * f + 0] = rng.normal();
        x[i * f + 1] = y[i];
        x[i * f + 2] = rng.normal();
        x[i * f + 3] = rng.normal();
    }
    const auto scores = gini_importance(x, n, f, y, true, 400, 100, 5);
    for (std::size_t j = 0; j < f; ++j) {
        CHECK(scores[j] >= 0.0);
        if (j != 1) CHECK(scores[1] > scores[j]);
    }
}

TEST_CASE("gini importance is zero when the target is constant") {
    tfe::CounterRng rng(32, 0);
    const std::size_t n = 100, f = 3;
    std::vector<double> x(n * f), y(n, 1.0);
    for (double& v : x) v = rng.normal();
    for (double s : gini_importance(x, n, f, y, true, 200, 50, 6)) CHECK(s == 0.0);
}

TEST_CASE("duplicated feature columns earn similar importance") {
    tfe::CounterRng rng(33, 0);
    const std::size_t n = 400, f = 2;
    std::vector<double> x(n * f), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rng.normal();
        x[i * f + 0] = v;
        x[i * f + 1] = v;
        y[i] = v > 0 ? 1.0 : 0.0;
    }
    const auto scores = gini_importance(x, n, f, y, true, 400, 200, 7);
    REQUIRE(scores[0] > 0.0);
    REQUIRE(scores[1] > 0.0);
    const double ratio = scores[0] / scores[1];
    CHECK(ratio > 0.8);
    CHECK(ratio < 1.25);
}

TEST_CASE("regression importance uses variance reduction") {
    tfe::CounterRng rng(34, 0);
    const std::size_t n = 300, f = 2;
    std::vector<double> x(n * f), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i * f + 0] = rng.normal();
        x[i * f + 1] = rng.normal();
        y[i] = 3.0 * x[i * f + 0];
    }
    const auto scores = gini_importance(x, n, f, y, false, 400, 150, 8);
    CHECK(scores[0] > scores[1]);
}

TEST_CASE("temperature scaling at T=1 is the plain softmax") {
    std::mt19937_64 rng(41);
    const std::size_t n = 4, c = 3;
    const auto logits = oracle::random_vec(rng, n * c, -2, 2);
    const auto probs = temperature_scale(logits, n, c, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(logits.begin() + static_cast<std::ptrdiff_t>(i * c),
                                logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
        const auto expected = oracle::softmax(row);
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            CHECK(probs[i * c + j] == doctest::Approx(expected[j]).epsilon(1e-12));
            sum += probs[i * c + j];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("fitted temperature is near 1 for calibrated logits") {
    tfe::CounterRng rng(42, 0);
    const std::size_t n = 2000, c = 3;
    std::vector<double> logits(n * c);
    std::vector<std::int32_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) logits[i * c + j] = rng.normal(0, 1.5);
        // Sample the label from softmax(logits): calibrated by construction.
        std::vector<double> row(logits.begin() + static_cast<std::ptrdiff_t>(i * c),
                                logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
        const auto p = oracle::softmax(row);
        double u = rng.next_double(), cum = 0;
        std::int32_t label = 0;
        for (std::size_t j = 0; j < c; ++j) {
            cum += p[j];
            if (u < cum) {
                label = static_cast<std::int32_t>(j);
                break;
            }
        }
        y[i] = label;
    }
    const double t = fit_temperature(logits, n, c, y);
    CHECK(t > 0.9);
    CHECK(t < 1.1);

    // Overconfident logits (x5) need T ~ 5 to undo the inflation.
    std::vector<double> inflated(logits);
    for (double& v : inflated) v *= 5.0;
    const double t5 = fit_temperature(inflated, n, c, y);
    CHECK(t5 > 4.0);
    CHECK(t5 < 6.0);
}

TEST_CASE("degenerate single-class labels give T=1") {
    const std::vector<double> logits{1.0, 2.0, 0.5, 1.5};
    const std::vector<std::int32_t> y{0, 0};
    CHECK(fit_temperature(logits, 2, 2, y) == 1.0);
}

TEST_CASE("temperature does not change the per-row argmax") {
    std::mt19937_64 rng(43);
    const std::size_t n = 16, c = 5;
    const auto logits = oracle::random_vec(rng, n * c, -3, 3);
    for (double t : {0.25, 1.0, 7.5}) {
        const auto probs = temperature_scale(logits, n, c, t);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t am_l = 0, am_p = 0;
            for (std::size_t j = 1; j < c; ++j) {
                if (logits[i * c + j] > logits[i * c + am_l]) am_l = j;
                if (probs[i * c + j] > probs[i * c + am_p]) am_p = j;
            }
            CHECK(am_l == am_p);
        }
    }
}

TEST_CASE("threshold tuning on separated probabilities picks the gap") {
    const std::vector<double> probs{0.1, 0.2, 0.8, 0.9};
    const std::vector<std::int32_t> y{0, 0, 1, 1};
    const double thr = tune_threshold(probs, y, Metric::accuracy);
    CHECK(thr == doctest::Approx(0.5));
    CHECK(tune_threshold(probs, y, Metric::f1) == doctest::Approx(0.5));
}

TEST_CASE("threshold tuning reaches metric one on exact probabilities") {
    const std::vector<double> probs{0.0, 1.0, 1.0, 0.0, 1.0};
    const std::vector<std::int32_t> y{0, 1, 1, 0, 1};
    const double thr = tune_threshold(probs, y, Metric::f1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        correct += ((probs[i] >= thr ? 1 : 0) == y[i]);
    }
    CHECK(correct == probs.size());
}

TEST_CASE("threshold tuning equals an exhaustive scan") {
    std::mt19937_64 seeded(44);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> probs(10);
    std::vector<std::int32_t> y(10);
    for (std::size_t i = 0; i < 10; ++i) {
        probs[i] = unif(seeded);
        y[i] = unif(seeded) < 0.5 ? 0 : 1;
    }
    for (auto metric : {Metric::f1, Metric::accuracy}) {
        const double thr = tune_threshold(probs, y, metric);
        CHECK(thr >= 0.0);
        CHECK(thr <= 1.0);

        // Exhaustive oracle over every midpoint, computed independently.
        std::vector<double> sorted(probs);
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        double best = -1, best_thr = 0.5;
        for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
            const double cand = 0.5 * (sorted[i] + sorted[i + 1]);
            std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
            for (std::size_t r = 0; r < probs.size(); ++r) {
                const bool pred = probs[r] >= cand;
                if (pred && y[r] == 1) ++tp;
                if (pred && y[r] == 0) ++fp;
                if (!pred && y[r] == 1) ++fn;
                if (static_cast<int>(pred) == y[r]) ++correct;
            }
            const double m = metric == Metric::accuracy
                                 ? static_cast<double>(correct) / 10.0
                                 : (2 * tp + fp + fn == 0
                                        ? 0.0
                                        : 2.0 * tp / static_cast<double>(2 * tp + fp + fn));
            if (m > best) {
                best = m;
                best_thr = cand;
            }
        }
        CHECK(thr == doctest::Approx(best_thr).epsilon(1e-12));
    }
}

TEST_CASE("single-class labels default the threshold to one half") {
    const std::vector<double> probs{0.2, 0.7};
    const std::vector<std::int32_t> y{1, 1};
    CHECK(tune_threshold(probs, y, Metric::f1) == 0.5);
}

TEST_CASE("build_view assembles a consistent estimator view") {
    tfe::prior::PriorHyperparams hp = tfe::prior::preset_hyperparams("micro-cls");
    hp.seed = 5;
    hp.missing_rate = 0.1;
    const auto ds = tfe::prior::generate_dataset(hp);

    const auto configs = build_estimator_configs(2, ds.n_features, 200, 17);
    for (const auto& cfg : configs) {
        const auto built = build_view(ds, cfg);
        const auto& view = built.view;
        CHECK(view.n_rows() == ds.n_rows);
        CHECK(view.n_train() == ds.n_train());
        CHECK(view.task == ds.task);
        CHECK(view.n_classes == ds.n_classes);
        if (cfg.use_svd) {
            CHECK(view.n_features() > cfg.feature_subset.size());
        } else {
            CHECK(view.n_features() == cfg.feature_subset.size());
        }
        // Missing cells hold zero with the indicator set.
        for (std::size_t i = 0; i < view.x.numel(); ++i) {
            if (view.nan_mask[i] != 0) CHECK(view.x(i) == 0.0f);
            CHECK(std::isfinite(view.x(i)));
        }
        // Label permutation round-trips.
        for (std::uint32_t c = 0; c < ds.n_classes; ++c) {
            CHECK(built.label_perm_inv[built.label_perm[c]] == c);
        }
        // Train block first, then test rows in original order.
        const std::size_t n_train = view.n_train();
        for (std::size_t r = 0; r < view.n_rows(); ++r) {
            CHECK((view.train_flags[r] != 0) == (r < n_train));
        }
    }
}

TEST_CASE("build_view standardizes regression targets over the train block") {
    tfe::prior::PriorHyperparams hp = tfe::prior::preset_hyperparams("micro-reg");
    hp.seed = 6;
    const auto ds = tfe::prior::generate_dataset(hp);
    const auto configs = build_estimator_configs(1, ds.n_features, 200, 18);
    const auto built = build_view(ds, configs[0]);
    const auto& view = built.view;
    double mean = 0;
    std::size_t n_train = 0;
    for (std::size_t r = 0; r < view.n_rows(); ++r) {
        if (view.train_flags[r] != 0) {
            mean += view.y_target[r];
            ++n_train;
        }
    }
    mean /= static_cast<double>(n_train);
    CHECK(std::abs(mean) < 1e-5);
}
