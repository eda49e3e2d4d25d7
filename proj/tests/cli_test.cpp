#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tfe/dataset.hpp"
#include "tfe/rng.hpp"
#include "tfe/inference.hpp"
#include "tfe/model.hpp"
#include "tfe/scm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const std::string out_path = "/tmp/tfe_cli_out.txt";
    const std::string cmd = std::string(TFE_CLI_PATH) + " " + args + " > " + out_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WEXITSTATUS(status);
    std::ifstream f(out_path);
    std::ostringstream ss;
    ss << f.rdbuf();
    result.output = ss.str();
    return result;
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::vector<double>> parse_csv_numbers(const fs::path& path) {
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!row.empty()) rows.push_back(row);
    }
    return rows;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::path("/tmp") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generate is deterministic per seed") {
    TempDir a("tfe_gen_a"), b("tfe_gen_b");
    const auto ra = run_cli("generate --preset micro-cls --seed 7 --out " + a.path.string());
    const auto rb = run_cli("generate --preset micro-cls --seed 7 --out " + b.path.string());
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    CHECK(slurp(a.path / "data_7.tfd") == slurp(b.path / "data_7.tfd"));

    json ma, mb;
    std::ifstream(a.path / "manifest.json") >> ma;
    std::ifstream(b.path / "manifest.json") >> mb;
    CHECK(ma["files"][0]["checksum"] == mb["files"][0]["checksum"]);
}

TEST_CASE("generate rejects class counts above the ceiling") {
    TempDir dir("tfe_gen_bad");
    const fs::path hp = dir.path / "hp.json";
    {
        std::ofstream f(hp);
        f << R"({"preset": "micro-cls", "n_classes": 200})";
    }
    const auto r = run_cli("generate --hp-file " + hp.string() + " --out " + dir.path.string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("generated files round-trip through the reader") {
    TempDir dir("tfe_gen_rt");
    const auto r = run_cli("generate --preset micro-reg --seed 9 --csv --out " +
                           dir.path.string());
    REQUIRE(r.exit_code == 0);

    const auto from_file = tfe::prior::load_tfd((dir.path / "data_9.tfd").string());
    tfe::prior::PriorHyperparams hp = tfe::prior::preset_hyperparams("micro-reg");
    hp.seed = 9;
    const auto regenerated = tfe::prior::generate_dataset(hp);
    CHECK(tfe::prior::dataset_checksum(from_file) == tfe::prior::dataset_checksum(regenerated));
    CHECK(fs::exists(dir.path / "data_9.csv"));
}

TEST_CASE("generate fans out across workers deterministically") {
    TempDir a("tfe_gen_multi_a"), b("tfe_gen_multi_b");
    ::setenv("TFE_THREADS", "3", 1);
    const auto ra =
        run_cli("generate --preset micro-cls --seed 20 --count 5 --out " + a.path.string());
    ::setenv("TFE_THREADS", "1", 1);
    const auto rb =
        run_cli("generate --preset micro-cls --seed 20 --count 5 --out " + b.path.string());
    ::unsetenv("TFE_THREADS");
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    for (int i = 20; i < 25; ++i) {
        const std::string name = "data_" + std::to_string(i) + ".tfd";
        CHECK(slurp(a.path / name) == slurp(b.path / name));
    }
}

TEST_CASE("predict matches the in-process ensemble") {
    TempDir dir("tfe_pred");
    REQUIRE(run_cli("generate --preset micro-cls --seed 11 --out " + dir.path.string())
                .exit_code == 0);
    const fs::path data = dir.path / "data_11.tfd";
    const fs::path preds = dir.path / "preds.csv";
    const auto r = run_cli("predict --data " + data.string() + " --init-seed 5 --estimators 1" +
                           " --out " + preds.string());
    REQUIRE(r.exit_code == 0);

    const auto ds = tfe::prior::load_tfd(data.string());
    const auto cfg = tfe::model::ModelConfig::micro(ds.task);
    const auto w = tfe::model::init_weights(cfg, 5);
    const auto expected = tfe::infer::ensemble_predict(cfg, w, ds, 1, 5);

    const auto rows = parse_csv_numbers(preds);
    REQUIRE(rows.size() == ds.n_test());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].size() == 1 + ds.n_classes);
        CHECK(static_cast<std::size_t>(rows[i][0]) == expected.test_row_ids[i]);
        for (std::size_t c = 0; c < ds.n_classes; ++c) {
            CHECK(std::abs(rows[i][1 + c] - expected.probs(i, c)) < 1e-6);
        }
    }
}

TEST_CASE("predict reuses a saved cache with identical output") {
    TempDir dir("tfe_pred_cache");
    REQUIRE(run_cli("generate --preset micro-cls --seed 12 --out " + dir.path.string())
                .exit_code == 0);
    const fs::path data = dir.path / "data_12.tfd";
    const fs::path cache = dir.path / "model.tpfc";
    const fs::path p1 = dir.path / "p1.csv";
    const fs::path p2 = dir.path / "p2.csv";

    const auto r1 = run_cli("predict --data " + data.string() + " --cache " + cache.string() +
                            " --out " + p1.string());
    REQUIRE(r1.exit_code == 0);
    CHECK(r1.output.find("cache: built") != std::string::npos);
    REQUIRE(fs::exists(cache));

    const auto r2 = run_cli("predict --data " + data.string() + " --cache " + cache.string() +
                            " --out " + p2.string());
    REQUIRE(r2.exit_code == 0);
    CHECK(r2.output.find("cache: reusing") != std::string::npos);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("cached predictions agree with the ensemble path") {
    TempDir dir("tfe_pred_cache_eq");
    REQUIRE(run_cli("generate --preset micro-cls --seed 13 --out " + dir.path.string())
                .exit_code == 0);
    const fs::path data = dir.path / "data_13.tfd";
    const fs::path direct = dir.path / "direct.csv";
    const fs::path cached = dir.path / "cached.csv";
    REQUIRE(run_cli("predict --data " + data.string() + " --out " + direct.string())
                .exit_code == 0);
    REQUIRE(run_cli("predict --data " + data.string() + " --cache " +
                    (dir.path / "c.tpfc").string() + " --out " + cached.string())
                .exit_code == 0);
    const auto a = parse_csv_numbers(direct);
    const auto b = parse_csv_numbers(cached);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            CHECK(std::abs(a[i][j] - b[i][j]) < 1e-5);
        }
    }
}

TEST_CASE("chunked and unchunked predictions agree through the CLI") {
    TempDir dir("tfe_pred_chunk");
    REQUIRE(run_cli("generate --preset micro-reg --seed 14 --out " + dir.path.string())
                .exit_code == 0);
    const fs::path data = dir.path / "data_14.tfd";
    const fs::path on = dir.path / "chunked.csv";
    const fs::path off = dir.path / "plain.csv";
    REQUIRE(run_cli("predict --data " + data.string() +
                    " --chunk-size 7 --chunking on --out " + on.string())
                .exit_code == 0);
    REQUIRE(run_cli("predict --data " + data.string() + " --chunking off --out " + off.string())
                .exit_code == 0);
    const auto a = parse_csv_numbers(on);
    const auto b = parse_csv_numbers(off);
    REQUIRE(a.size() == b.size());
    REQUIRE(!a.empty());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].size() == 10);  // row_id + q10..q90
        for (std::size_t j = 1; j < a[i].size(); ++j) {
            const double scale = std::max(1.0, std::abs(b[i][j]));
            CHECK(std::abs(a[i][j] - b[i][j]) / scale < 1e-5);
        }
        // Quantiles must be monotone in the level.
        for (std::size_t j = 2; j < a[i].size(); ++j) CHECK(a[i][j] >= a[i][j - 1]);
    }
}

TEST_CASE("predict exits 3 when the class count exceeds the ceiling") {
    TempDir dir("tfe_pred_ceiling");
    // Hand-built table with 170 classes: storable, but above the model ceiling.
    tfe::prior::Dataset ds;
    ds.n_rows = 340;
    ds.n_features = 2;
    ds.task = tfe::prior::Task::classification;
    ds.n_classes = 170;
    ds.col_kinds.assign(2, {});
    ds.x.resize(680);
    ds.nan_mask.assign(680, 0);
    ds.y.resize(340);
    ds.split.assign(340, 0);
    tfe::CounterRng rng(1, 0);
    for (double& v : ds.x) v = rng.normal();
    for (std::size_t r = 0; r < 340; ++r) ds.y[r] = static_cast<double>(r % 170);
    for (std::size_t r = 300; r < 340; ++r) ds.split[r] = 1;
    const fs::path data = dir.path / "wide.tfd";
    tfe::prior::save_tfd(ds, data.string());

    const auto r = run_cli("predict --data " + data.string() + " --out " +
                           (dir.path / "p.csv").string());
    CHECK(r.exit_code == 3);
}

TEST_CASE("verify suites pass on a fresh build and write reports") {
    TempDir dir("tfe_verify");
    for (const std::string suite : {"chunking", "cache", "decoder", "prior"}) {
        const fs::path report = dir.path / (suite + ".json");
        const auto r = run_cli("verify --suite " + suite + " --report " + report.string());
        CHECK(r.exit_code == 0);
        json j;
        std::ifstream(report) >> j;
        CHECK(j["suite"] == suite);
        CHECK(j["pass"] == true);
        CHECK(j["invariants"].size() >= 3);
        for (const auto& inv : j["invariants"]) {
            CHECK(inv.contains("name"));
            CHECK(inv.contains("tolerance"));
            CHECK(inv.contains("measured"));
            CHECK(inv["pass"] == true);
        }
    }
}

TEST_CASE("injected decoder fault is caught with exit code 4") {
    const auto r = run_cli("verify --suite decoder --inject-fault skip-label-perm-inverse");
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("[FAIL] ensemble_label_perm_inversion") != std::string::npos);
}

TEST_CASE("bench writes one record per grid cell and mode") {
    TempDir dir("tfe_bench");
    const fs::path csv = dir.path / "bench.csv";
    const auto r = run_cli(
        "bench --grid 'rows=192,384;feats=5' --modes unchunked,chunked --chunk-size 64"
        " --test-rows 32 --reps 3 --warmup 1 --seed 3 --out " +
        csv.string());
    REQUIRE(r.exit_code == 0);

    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);
    CHECK(line == "n_train,n_test,n_features,mode,wall_ms,peak_bytes,seed");
    std::size_t n_rows = 0;
    std::int64_t peak_unchunked = 0, peak_chunked = 0;
    while (std::getline(f, line)) {
        ++n_rows;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 7);
        CHECK(std::stod(cells[4]) > 0.0);   // wall_ms
        CHECK(std::stoll(cells[5]) > 0);    // peak_bytes
        if (cells[0] == "384") {
            if (cells[3] == "unchunked") peak_unchunked = std::stoll(cells[5]);
            if (cells[3] == "chunked") peak_chunked = std::stoll(cells[5]);
        }
    }
    CHECK(n_rows == 4);
    CHECK(peak_chunked <= peak_unchunked);
}

TEST_CASE("cached predict is faster than cold fit+predict at 8192 train rows") {
    TempDir dir("tfe_bench_speed");
    const fs::path csv = dir.path / "speed.csv";
    const auto r = run_cli(
        "bench --grid 'rows=8192;feats=5' --modes unchunked,cached_predict --chunk-size 2048"
        " --test-rows 100 --reps 1 --warmup 0 --seed 4 --out " +
        csv.string());
    REQUIRE(r.exit_code == 0);
    double cold = 0, warm = 0;
    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells[3] == "unchunked") cold = std::stod(cells[4]);
        if (cells[3] == "cached_predict") warm = std::stod(cells[4]);
    }
    CHECK(cold > 0.0);
    CHECK(warm > 0.0);
    CHECK(warm < cold);
}
