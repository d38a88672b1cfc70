#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "json.hpp"
#include "metamix/checkpoint.hpp"
#include "metamix/errors.hpp"
#include "metamix/experiment.hpp"
#include "metamix/metrics.hpp"
#include "metamix/net.hpp"

using namespace metamix;
namespace fs = std::filesystem;
using testutil::params_equal;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& leaf)
        : path(fs::temp_directory_path() / leaf) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str(const std::string& leaf = "") const {
        return leaf.empty() ? path.string() : (path / leaf).string();
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(bool(in), "cannot open " << p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    REQUIRE(bool(out));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// Small, fast experiment: 2-class tasks in 6 dimensions.
RunConfig tiny_config(int tasks, std::vector<std::uint64_t> seeds) {
    RunConfig cfg;
    cfg.stream.num_tasks = tasks;
    cfg.stream.classes_per_task = 2;
    cfg.stream.dim = 6;
    cfg.stream.separation = 6.0;
    cfg.stream.samples_per_class = 30;
    cfg.stream.batch_size = 16;
    cfg.hidden_dims = {8};
    cfg.meta.base_epochs = 3;
    cfg.meta.iteration_num = 5;
    cfg.meta.buffer_per_task = 10;
    cfg.buffer_capacity = 40;
    cfg.seeds = std::move(seeds);
    cfg.timing = false;
    return cfg;
}

AccMatrix matrix_from_json(const nlohmann::json& j) {
    const int T = j.at("T").get<int>();
    AccMatrix m(T);
    const auto& rows = j.at("R");
    REQUIRE(static_cast<int>(rows.size()) == T);
    for (int i = 0; i < T; ++i) {
        REQUIRE(static_cast<int>(rows[i].size()) == T);
        for (int jj = 0; jj < T; ++jj) {
            if (jj <= i) {
                m.record(i, jj, rows[i][jj].get<double>());
            } else {
                CHECK(rows[i][jj].is_null());
            }
        }
    }
    return m;
}

}  // namespace

TEST_CASE("an empty JSON object yields the default configuration") {
    RunConfig cfg = config_from_json("{}");
    CHECK(cfg.stream.kind == StreamSpec::Kind::synthetic);
    CHECK(cfg.stream.num_tasks == 5);
    CHECK(cfg.stream.classes_per_task == 2);
    CHECK(cfg.stream.dim == 16);
    CHECK(cfg.stream.separation == 6.0);
    CHECK(cfg.stream.samples_per_class == 200);
    CHECK(cfg.stream.batch_size == 32);
    CHECK(cfg.protocol == Protocol::CIL);
    CHECK(cfg.hidden_dims == std::vector<int>{64, 64});
    CHECK(cfg.meta.iteration_num == 50);
    CHECK(cfg.meta.variant == Variant::E_ML_LW);
    CHECK(cfg.meta.buffer_per_task == 40);  // buffer_capacity / num_tasks
    CHECK(cfg.buffer_capacity == 200);
    CHECK(cfg.seeds.size() == 10);
    CHECK(cfg.out_dir == "results");
    CHECK(cfg.bwt_norm == BwtNorm::paper);
    CHECK(cfg.timing);
    cfg.validate();
}

TEST_CASE("a fully customized configuration survives the JSON round trip") {
    RunConfig cfg;
    cfg.stream.num_tasks = 3;
    cfg.stream.classes_per_task = 3;
    cfg.stream.dim = 9;
    cfg.stream.separation = 3.5;
    cfg.stream.samples_per_class = 44;
    cfg.stream.batch_size = 13;
    cfg.protocol = Protocol::TIL;
    cfg.hidden_dims = {5, 7};
    cfg.meta.iteration_num = 9;
    cfg.meta.meta_lr = 0.25;
    cfg.meta.base_lr = 0.05;
    cfg.meta.base_epochs = 2;
    cfg.meta.variant = Variant::E;
    cfg.meta.grad_sample = 77;
    cfg.meta.buffer_batch = 19;
    cfg.meta.fixed_alpha_value = 0.25;
    cfg.meta.gen_hidden = 6;
    cfg.meta.buffer_includes_current = false;
    cfg.meta.refresh_features = true;
    cfg.meta.replay_base = true;
    cfg.meta.feature_mode = FeatureMode::mean_abs;
    cfg.meta.normalize_feats = true;
    cfg.meta.buffer_per_task = 12;
    cfg.meta.buffer_policy = BufferPolicy::ring;
    cfg.variants = {Variant::naive, Variant::E_ML_LW};
    cfg.buffer_capacity = 64;
    cfg.seeds = {4, 5};
    cfg.out_dir = "elsewhere";
    cfg.bwt_norm = BwtNorm::standard;
    cfg.timing = false;

    RunConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.stream.num_tasks == 3);
    CHECK(back.stream.classes_per_task == 3);
    CHECK(back.stream.dim == 9);
    CHECK(back.stream.separation == 3.5);
    CHECK(back.stream.samples_per_class == 44);
    CHECK(back.stream.batch_size == 13);
    CHECK(back.protocol == Protocol::TIL);
    CHECK(back.hidden_dims == cfg.hidden_dims);
    CHECK(back.meta.iteration_num == 9);
    CHECK(back.meta.meta_lr == 0.25);
    CHECK(back.meta.base_lr == 0.05);
    CHECK(back.meta.base_epochs == 2);
    CHECK(back.meta.variant == Variant::E);
    CHECK(back.meta.grad_sample == 77);
    CHECK(back.meta.buffer_batch == 19);
    CHECK(back.meta.fixed_alpha_value == 0.25);
    CHECK(back.meta.gen_hidden == 6);
    CHECK_FALSE(back.meta.buffer_includes_current);
    CHECK(back.meta.refresh_features);
    CHECK(back.meta.replay_base);
    CHECK(back.meta.feature_mode == FeatureMode::mean_abs);
    CHECK(back.meta.normalize_feats);
    CHECK(back.meta.buffer_per_task == 12);
    CHECK(back.meta.buffer_policy == BufferPolicy::ring);
    CHECK(back.variants == cfg.variants);
    CHECK(back.buffer_capacity == 64);
    CHECK(back.seeds == cfg.seeds);
    CHECK(back.out_dir == "elsewhere");
    CHECK(back.bwt_norm == BwtNorm::standard);
    CHECK_FALSE(back.timing);

    // The echo of the echo is textually stable.
    CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("file-backed stream specs round trip") {
    RunConfig cfg;
    cfg.stream.kind = StreamSpec::Kind::idx;
    cfg.stream.images_path = "data/images.idx";
    cfg.stream.labels_path = "data/labels.idx";
    cfg.stream.split_spec = {{0, 1}, {2, 3}};
    RunConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.stream.kind == StreamSpec::Kind::idx);
    CHECK(back.stream.images_path == "data/images.idx");
    CHECK(back.stream.labels_path == "data/labels.idx");
    CHECK(back.stream.split_spec == cfg.stream.split_spec);

    RunConfig csv;
    csv.stream.kind = StreamSpec::Kind::csv;
    csv.stream.csv_path = "data/table.csv";
    csv.stream.split_spec = {{0}, {1}};
    RunConfig back2 = config_from_json(config_to_json(csv));
    CHECK(back2.stream.kind == StreamSpec::Kind::csv);
    CHECK(back2.stream.csv_path == "data/table.csv");
    CHECK(back2.stream.split_spec == csv.stream.split_spec);
}

TEST_CASE("config parsing rejects malformed input") {
    CHECK_THROWS_AS(config_from_json("{"), ConfigError);
    CHECK_THROWS_AS(config_from_json("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"stream": {"colour": 3}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"meta": {"momentum": 0.9}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"hidden_dims": "wide"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"protocol": "both"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"meta": {"variant": "zzz"}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"bwt_norm": "L2"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"meta": {"buffer_policy": "stack"}})"),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"meta": {"feature_mode": "max"}})"),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"variants": ["naive", "nope"]})"),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"stream": {"kind": "parquet"}})"),
                    ConfigError);
}

TEST_CASE("buffer_per_task falls back to an even share of the buffer") {
    RunConfig a =
        config_from_json(R"({"buffer_capacity": 35, "stream": {"num_tasks": 4}})");
    CHECK(a.meta.buffer_per_task == 8);

    RunConfig b = config_from_json(
        R"({"buffer_capacity": 35, "meta": {"buffer_per_task": 3}})");
    CHECK(b.meta.buffer_per_task == 3);

    RunConfig c =
        config_from_json(R"({"buffer_capacity": 3, "stream": {"num_tasks": 5}})");
    CHECK(c.meta.buffer_per_task == 1);

    RunConfig d = config_from_json(
        R"({"buffer_capacity": 35, "stream": {"num_tasks": 4},
            "meta": {"buffer_per_task": 0}})");
    CHECK(d.meta.buffer_per_task == 8);
}

TEST_CASE("configuration validation catches broken field combinations") {
    RunConfig no_seeds = tiny_config(2, {});
    CHECK_THROWS_AS(no_seeds.validate(), ConfigError);

    RunConfig flat = tiny_config(2, {1});
    flat.stream.dim = 0;
    CHECK_THROWS_AS(flat.validate(), ConfigError);

    RunConfig idx = tiny_config(2, {1});
    idx.stream.kind = StreamSpec::Kind::idx;
    CHECK_THROWS_AS(idx.validate(), ConfigError);  // paths missing

    RunConfig hidden = tiny_config(2, {1});
    hidden.hidden_dims = {8, 0};
    CHECK_THROWS_AS(hidden.validate(), ConfigError);
}

TEST_CASE("a single-task run defines ACC but leaves BWT empty") {
    RunConfig cfg = tiny_config(1, {3});
    RunResult r = run_single(cfg, Variant::naive, 3);
    REQUIRE(r.ok);
    REQUIRE(r.matrix.has_value());
    CHECK(r.matrix->size() == 1);
    CHECK(r.acc == r.matrix->at(0, 0));
    CHECK(r.acc > 0.5);  // well-separated two-class task
    CHECK_FALSE(r.bwt_paper.has_value());
    CHECK_FALSE(r.bwt_standard.has_value());
    REQUIRE(r.alpha_history.size() == 1);
    CHECK(r.alpha_history[0] == std::vector<double>{1.0, 1.0});
    REQUIRE(r.outer_loss_traces.size() == 1);
    CHECK(r.outer_loss_traces[0].empty());
    CHECK(r.wall_ms == 0);  // timing disabled
}

TEST_CASE("run_single reports every batch that base training consumes") {
    RunConfig cfg = tiny_config(1, {0});
    std::size_t rows = 0;
    int max_rows = 0;
    TrainObserver obs = [&](const Batch& b) {
        rows += static_cast<std::size_t>(b.rows());
        max_rows = std::max(max_rows, b.rows());
    };
    run_single(cfg, Variant::naive, 0, &obs);
    // 2 classes x 24 training rows x 3 epochs.
    CHECK(rows == 144);
    CHECK(max_rows <= 16);
}

TEST_CASE("the sweep covers the variant-seed grid and records failures in place") {
    RunConfig cfg = tiny_config(2, {1, 2});
    cfg.variants = {Variant::E, Variant::naive};
    std::vector<RunResult> results = run_experiment(cfg);
    REQUIRE(results.size() == 4);
    CHECK(results[0].variant == "E");
    CHECK(results[0].seed == 1);
    CHECK(results[1].seed == 2);
    CHECK(results[2].variant == "naive");
    for (const RunResult& r : results) {
        CHECK(r.ok);
        CHECK(r.bwt_paper.has_value());
    }
}

TEST_CASE("emit_results writes the full artifact set") {
    TempDir tmp("metamix_emit_test");
    RunConfig cfg = tiny_config(2, {1, 2});
    cfg.variants = {Variant::E, Variant::naive};
    std::vector<RunResult> results = run_experiment(cfg);
    const std::string dir = tmp.str("out");
    emit_results(results, dir, cfg);

    CHECK(fs::exists(fs::path(dir) / "config.json"));
    for (const char* name : {"rmatrix_E_1.json", "rmatrix_E_2.json",
                             "rmatrix_naive_1.json", "rmatrix_naive_2.json"}) {
        CHECK(fs::exists(fs::path(dir) / name));
    }
    // No leftover staging files.
    for (const auto& entry : fs::directory_iterator(dir)) {
        CHECK(entry.path().extension() != ".tmp");
    }

    const std::string csv = slurp(fs::path(dir) / "summary.csv");
    std::vector<std::string> lines = lines_of(csv);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "variant,seed,acc,bwt_paper,bwt_standard,wall_ms");

    // The config echo reparses to the same canonical text.
    RunConfig echoed = config_from_json(slurp(fs::path(dir) / "config.json"));
    CHECK(config_to_json(echoed) == config_to_json(cfg));

    // Each CSV row reproduces its RunResult exactly (printed at full precision).
    for (std::size_t i = 0; i < results.size(); ++i) {
        std::istringstream row(lines[i + 1]);
        std::string variant, seed, acc, bwt_p, bwt_s, wall;
        std::getline(row, variant, ',');
        std::getline(row, seed, ',');
        std::getline(row, acc, ',');
        std::getline(row, bwt_p, ',');
        std::getline(row, bwt_s, ',');
        std::getline(row, wall, ',');
        CHECK(variant == results[i].variant);
        CHECK(std::stoull(seed) == results[i].seed);
        CHECK(std::stod(acc) == results[i].acc);
        CHECK(std::stod(bwt_p) == *results[i].bwt_paper);
        CHECK(std::stod(bwt_s) == *results[i].bwt_standard);
        CHECK(wall == "0");
    }
}

TEST_CASE("stored matrices reproduce the summary metrics") {
    TempDir tmp("metamix_reload_test");
    RunConfig cfg = tiny_config(2, {7});
    cfg.variants = {Variant::E_ML_LW};
    std::vector<RunResult> results = run_experiment(cfg);
    REQUIRE(results.size() == 1);
    const std::string dir = tmp.str("out");
    emit_results(results, dir, cfg);

    nlohmann::json j =
        nlohmann::json::parse(slurp(fs::path(dir) / "rmatrix_E_ML_LW_7.json"));
    CHECK(j.at("variant") == "E_ML_LW");
    CHECK(j.at("seed") == 7);
    AccMatrix m = matrix_from_json(j);
    CHECK(acc_metric(m) == j.at("acc").get<double>());
    CHECK(bwt_metric(m, BwtNorm::paper) == j.at("bwt_paper").get<double>());
    CHECK(bwt_metric(m, BwtNorm::standard) == j.at("bwt_standard").get<double>());
    CHECK(acc_metric(m) == results[0].acc);

    // Alpha history: all-ones for the first task, open-interval after.
    const auto& ah = j.at("alpha_history");
    REQUIRE(ah.size() == 2);
    for (double a : ah[0].get<std::vector<double>>()) CHECK(a == 1.0);
    for (double a : ah[1].get<std::vector<double>>()) {
        CHECK(a > 0.0);
        CHECK(a < 1.0);
    }
    CHECK(j.at("outer_loss_traces").at(1).size() ==
          static_cast<std::size_t>(cfg.meta.iteration_num));
}

TEST_CASE("a single-task emission stores null BWT and nan CSV cells") {
    TempDir tmp("metamix_nan_test");
    RunConfig cfg = tiny_config(1, {0});
    cfg.variants = {Variant::naive};
    std::vector<RunResult> results = run_experiment(cfg);
    const std::string dir = tmp.str("out");
    emit_results(results, dir, cfg);

    nlohmann::json j =
        nlohmann::json::parse(slurp(fs::path(dir) / "rmatrix_naive_0.json"));
    CHECK(j.at("T") == 1);
    CHECK(j.at("bwt_paper").is_null());
    CHECK(j.at("bwt_standard").is_null());

    std::vector<std::string> lines = lines_of(slurp(fs::path(dir) / "summary.csv"));
    REQUIRE(lines.size() == 2);
    CHECK(lines[1].find(",nan,nan,") != std::string::npos);
}

TEST_CASE("two executions emit byte-identical artifacts") {
    TempDir tmp("metamix_repro_test");
    RunConfig cfg = tiny_config(2, {0});
    cfg.variants = {Variant::E_ML_LW};

    emit_results(run_experiment(cfg), tmp.str("a"), cfg);
    emit_results(run_experiment(cfg), tmp.str("b"), cfg);

    for (const char* name : {"summary.csv", "rmatrix_E_ML_LW_0.json", "config.json"}) {
        CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
    }
}

TEST_CASE("emitting an empty result set is refused") {
    TempDir tmp("metamix_empty_emit_test");
    RunConfig cfg = tiny_config(1, {0});
    CHECK_THROWS_AS(emit_results({}, tmp.str("out"), cfg), ConfigError);
}

TEST_CASE("an unusable output directory raises an I/O error") {
    TempDir tmp("metamix_io_test");
    spit(tmp.path / "blocker", "not a directory\n");
    RunConfig cfg = tiny_config(1, {0});
    std::vector<RunResult> results = run_experiment(cfg);
    CHECK_THROWS_AS(
        emit_results(results, (tmp.path / "blocker" / "out").string(), cfg),
        IoError);
}

TEST_CASE("checkpoints round trip bit-for-bit") {
    TempDir tmp("metamix_ckpt_test");
    ParamSet p = init_params({{"fc1", 5, 7, Activation::relu},
                              {"head", 7, 3, Activation::identity}},
                             99);
    const std::string path = tmp.str("model.ckpt");
    save_checkpoint(p, path);
    ParamSet back = load_checkpoint(path);
    CHECK(params_equal(back, p));
    REQUIRE(back.layers.size() == 2);
    CHECK(back.layers[0].activation == Activation::relu);
    CHECK(back.layers[1].activation == Activation::identity);
    CHECK(back.layers[0].name == "fc1");

    // Layout: one JSON header line, then 8 bytes per parameter.
    const std::string bytes = slurp(path);
    const std::size_t header_end = bytes.find('\n');
    REQUIRE(header_end != std::string::npos);
    CHECK(bytes.size() == header_end + 1 + 8 * p.total_params());
}

TEST_CASE("corrupted checkpoints are rejected") {
    TempDir tmp("metamix_ckpt_corrupt_test");
    ParamSet p = init_params({{"fc", 4, 3, Activation::relu}}, 5);
    const std::string path = tmp.str("model.ckpt");
    save_checkpoint(p, path);
    const std::string good = slurp(path);

    spit(tmp.path / "short.ckpt", good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(tmp.str("short.ckpt")), CheckpointError);

    spit(tmp.path / "long.ckpt", good + "XXXXXXXX");
    CHECK_THROWS_AS(load_checkpoint(tmp.str("long.ckpt")), CheckpointError);

    std::string wrong = good;
    wrong.replace(wrong.find("paramset"), 8, "paramsXt");
    spit(tmp.path / "format.ckpt", wrong);
    CHECK_THROWS_AS(load_checkpoint(tmp.str("format.ckpt")), CheckpointError);

    spit(tmp.path / "nojson.ckpt", "hello world\n\x01\x02\x03");
    CHECK_THROWS_AS(load_checkpoint(tmp.str("nojson.ckpt")), CheckpointError);

    CHECK_THROWS_AS(load_checkpoint(tmp.str("missing.ckpt")), IoError);
}
