#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "metamix/checkpoint.hpp"
#include "metamix/ensemble.hpp"
#include "metamix/errors.hpp"
#include "metamix/experiment.hpp"
#include "metamix/metrics.hpp"

namespace fs = std::filesystem;
using namespace metamix;

namespace {

std::string fmt17(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    auto parse_one = [&](const std::string& s) -> std::uint64_t {
        try {
            std::size_t pos = 0;
            if (s.empty() || s[0] == '-') throw std::invalid_argument("negative");
            std::uint64_t v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("cannot parse seed '" + s + "' in '" + text + "'");
        }
    };

    const std::size_t dots = text.find("..");
    if (dots != std::string::npos) {
        const std::uint64_t a = parse_one(text.substr(0, dots));
        const std::uint64_t b = parse_one(text.substr(dots + 2));
        if (a > b) throw ConfigError("seed range '" + text + "' is descending");
        std::vector<std::uint64_t> out;
        for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
        return out;
    }

    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_one(item));
    if (out.empty()) throw ConfigError("empty seed list '" + text + "'");
    return out;
}

std::vector<double> parse_alphas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            double v = std::stod(item, &pos);
            if (pos != item.size()) throw std::invalid_argument("trailing junk");
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse alpha '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty alpha list '" + text + "'");
    return out;
}

struct SweepFlags {
    std::string config_path;
    std::string variant;
    std::string protocol;
    std::string seeds;
    std::string out;
    std::string bwt_norm;
};

void add_sweep_flags(CLI::App* cmd, SweepFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--variant", f.variant, "naive, E, E_ML or E_ML_LW")
        ->check(CLI::IsMember({"naive", "E", "E_ML", "E_ML_LW"}));
    cmd->add_option("--protocol", f.protocol, "til, cil or ocil")
        ->check(CLI::IsMember({"til", "cil", "ocil"}));
    cmd->add_option("--seeds", f.seeds, "seed range a..b or comma list");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--bwt-norm", f.bwt_norm, "paper or standard")
        ->check(CLI::IsMember({"paper", "standard"}));
}

RunConfig resolve_config(const SweepFlags& f) {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
    if (!f.variant.empty()) {
        cfg.meta.variant = variant_from_name(f.variant);
        cfg.variants = {cfg.meta.variant};
    }
    if (!f.protocol.empty()) cfg.protocol = protocol_from_name(f.protocol);
    if (!f.seeds.empty()) cfg.seeds = parse_seeds(f.seeds);
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (!f.bwt_norm.empty()) cfg.bwt_norm = bwt_norm_from_name(f.bwt_norm);
    cfg.validate();
    return cfg;
}

int run_sweep(RunConfig cfg) {
    std::vector<RunResult> results = run_experiment(cfg);
    emit_results(results, cfg.out_dir, cfg);

    int failed = 0;
    for (const RunResult& r : results) {
        if (!r.ok) {
            ++failed;
            std::cerr << r.variant << " seed=" << r.seed << " failed: " << r.error
                      << "\n";
            continue;
        }
        std::optional<double> bwt =
            cfg.bwt_norm == BwtNorm::paper ? r.bwt_paper : r.bwt_standard;
        std::printf("%-8s seed=%-4llu acc=%.4f", r.variant.c_str(),
                    static_cast<unsigned long long>(r.seed), r.acc);
        if (bwt) {
            std::printf(" bwt_%s=%.4f", bwt_norm_name(cfg.bwt_norm), *bwt);
        } else {
            std::printf(" bwt_%s=undefined", bwt_norm_name(cfg.bwt_norm));
        }
        std::printf(" wall_ms=%lld\n", static_cast<long long>(r.wall_ms));
    }
    std::printf("wrote %s/summary.csv (%zu runs, %d failed)\n", cfg.out_dir.c_str(),
                results.size(), failed);
    return failed == 0 ? 0 : 3;
}

int cmd_metrics(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("rmatrix_", 0) == 0 && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) throw IoError("no rmatrix_*.json files in '" + dir + "'");
    std::sort(files.begin(), files.end());

    std::cout << "variant,seed,acc,bwt_paper,bwt_standard\n";
    for (const fs::path& p : files) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot open '" + p.string() + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("cannot parse '" + p.string() + "': " + e.what());
        }
        const int T = j.at("T").get<int>();
        AccMatrix m(T);
        const auto& rows = j.at("R");
        for (int i = 0; i < T; ++i) {
            for (int c = 0; c <= i; ++c) {
                if (!rows.at(i).at(c).is_null()) {
                    m.record(i, c, rows.at(i).at(c).get<double>());
                }
            }
        }
        std::cout << j.at("variant").get<std::string>() << ','
                  << j.at("seed").get<std::uint64_t>() << ',' << fmt17(acc_metric(m))
                  << ',';
        if (T >= 2) {
            std::cout << fmt17(bwt_metric(m, BwtNorm::paper)) << ','
                      << fmt17(bwt_metric(m, BwtNorm::standard)) << '\n';
        } else {
            std::cout << "nan,nan\n";
        }
    }
    return 0;
}

int cmd_blend(const std::string& current_path, const std::string& previous_path,
              const std::string& alpha_text, const std::string& out_path) {
    ParamSet current = load_checkpoint(current_path);
    ParamSet previous = load_checkpoint(previous_path);
    std::vector<double> values = parse_alphas(alpha_text);

    AlphaVector alphas;
    if (values.size() == 1) {
        alphas = fixed_alpha(current.layer_count(), values[0]);
    } else {
        alphas.values = values;
    }
    ParamSet fused = interpolate_layerwise(current, previous, alphas);
    save_checkpoint(fused, out_path);
    std::printf("blended %d layers -> %s\n", fused.layer_count(), out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise weight-ensembling continual-learning experiments"};
    app.require_subcommand(1);

    SweepFlags run_flags;
    CLI::App* run_cmd = app.add_subcommand("run", "run the configured variant sweep");
    add_sweep_flags(run_cmd, run_flags);

    SweepFlags ablate_flags;
    CLI::App* ablate_cmd =
        app.add_subcommand("ablate", "run all four variants for comparison");
    add_sweep_flags(ablate_cmd, ablate_flags);

    std::string metrics_dir = "results";
    CLI::App* metrics_cmd =
        app.add_subcommand("metrics", "recompute ACC/BWT from stored R matrices");
    metrics_cmd->add_option("--out", metrics_dir, "result directory to read");

    std::string blend_current, blend_previous, blend_alpha = "0.5",
                               blend_out = "blended.ckpt";
    CLI::App* blend_cmd =
        app.add_subcommand("blend", "interpolate two checkpoints layer by layer");
    blend_cmd->add_option("--current", blend_current, "checkpoint mixed with alpha")
        ->required();
    blend_cmd->add_option("--previous", blend_previous, "checkpoint mixed with 1-alpha")
        ->required();
    blend_cmd->add_option("--alpha", blend_alpha,
                          "single coefficient or per-layer comma list");
    blend_cmd->add_option("--out", blend_out, "output checkpoint path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run_cmd->parsed()) {
            return run_sweep(resolve_config(run_flags));
        }
        if (ablate_cmd->parsed()) {
            RunConfig cfg = resolve_config(ablate_flags);
            cfg.variants = {Variant::naive, Variant::E, Variant::E_ML, Variant::E_ML_LW};
            return run_sweep(std::move(cfg));
        }
        if (metrics_cmd->parsed()) {
            return cmd_metrics(metrics_dir);
        }
        if (blend_cmd->parsed()) {
            return cmd_blend(blend_current, blend_previous, blend_alpha, blend_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const CheckpointError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const IngestError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
