#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metamix/metaloop.hpp"
#include "metamix/metrics.hpp"
#include "metamix/streams.hpp"

namespace metamix {

struct StreamSpec {
    enum class Kind { synthetic, idx, csv };
    Kind kind = Kind::synthetic;

    // synthetic
    int num_tasks = 5;
    int classes_per_task = 2;
    int dim = 16;
    double separation = 6.0;
    int samples_per_class = 200;

    int batch_size = 32;

    // idx / csv
    std::string images_path;
    std::string labels_path;
    std::string csv_path;
    std::vector<std::vector<int>> split_spec;
};

// Full experiment description: stream, protocol, learner shape, fusion
// configuration, sweep axes and output location.
struct RunConfig {
    StreamSpec stream;
    Protocol protocol = Protocol::CIL;
    std::vector<int> hidden_dims = {64, 64};
    MetaConfig meta;
    std::vector<Variant> variants;  // empty: just meta.variant
    std::size_t buffer_capacity = 200;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::string out_dir = "results";
    BwtNorm bwt_norm = BwtNorm::paper;
    bool timing = true;  // set false for byte-reproducible summaries

    std::vector<Variant> variant_list() const {
        return variants.empty() ? std::vector<Variant>{meta.variant} : variants;
    }
    void validate() const;
};

struct RunResult {
    std::string variant;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    std::optional<AccMatrix> matrix;
    double acc = 0.0;
    std::optional<double> bwt_paper;
    std::optional<double> bwt_standard;
    std::vector<std::vector<double>> alpha_history;
    std::vector<std::vector<double>> outer_loss_traces;
    std::int64_t wall_ms = 0;
};

// Build the stream a run will see (exposed for tests and diagnostics).
TaskStream build_stream(const RunConfig& cfg, std::uint64_t run_seed);

// One (variant, seed) run of the full task loop. Deterministic per
// (config, seed); the observer, when given, sees every batch base training
// consumes.
RunResult run_single(const RunConfig& cfg, Variant v, std::uint64_t seed,
                     const TrainObserver* observer = nullptr);

// The sweep over variant_list() x seeds. A failed run is recorded in its
// RunResult without aborting the rest.
std::vector<RunResult> run_experiment(const RunConfig& cfg);

// Write summary.csv, one rmatrix_<variant>_<seed>.json per run and a
// config.json echo into dir. Every file is staged and renamed into place.
void emit_results(const std::vector<RunResult>& results, const std::string& dir,
                  const RunConfig& cfg);

// JSON config I/O (the same schema emit_results echoes).
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);

const char* protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);
const char* bwt_norm_name(BwtNorm n);
BwtNorm bwt_norm_from_name(const std::string& name);

}  // namespace metamix
