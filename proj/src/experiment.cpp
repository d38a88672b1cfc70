#include "metamix/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"
#include "metamix/errors.hpp"
#include "metamix/rng.hpp"

namespace metamix {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const char* protocol_name(Protocol p) {
    switch (p) {
        case Protocol::TIL: return "til";
        case Protocol::CIL: return "cil";
        case Protocol::OCIL: return "ocil";
    }
    throw ConfigError("unhandled protocol");
}

Protocol protocol_from_name(const std::string& name) {
    if (name == "til") return Protocol::TIL;
    if (name == "cil") return Protocol::CIL;
    if (name == "ocil") return Protocol::OCIL;
    throw ConfigError("unknown protocol '" + name + "'");
}

const char* bwt_norm_name(BwtNorm n) {
    return n == BwtNorm::paper ? "paper" : "standard";
}

BwtNorm bwt_norm_from_name(const std::string& name) {
    if (name == "paper") return BwtNorm::paper;
    if (name == "standard") return BwtNorm::standard;
    throw ConfigError("unknown bwt norm '" + name + "'");
}

namespace {

const char* stream_kind_name(StreamSpec::Kind k) {
    switch (k) {
        case StreamSpec::Kind::synthetic: return "synthetic";
        case StreamSpec::Kind::idx: return "idx";
        case StreamSpec::Kind::csv: return "csv";
    }
    throw ConfigError("unhandled stream kind");
}

StreamSpec::Kind stream_kind_from_name(const std::string& name) {
    if (name == "synthetic") return StreamSpec::Kind::synthetic;
    if (name == "idx") return StreamSpec::Kind::idx;
    if (name == "csv") return StreamSpec::Kind::csv;
    throw ConfigError("unknown stream kind '" + name + "'");
}

void validate_split_spec(const std::vector<std::vector<int>>& split) {
    if (split.empty()) throw ConfigError("split_spec must name at least one task");
    std::set<int> seen;
    for (const auto& group : split) {
        if (group.empty()) throw ConfigError("split_spec group is empty");
        for (int c : group) {
            if (c < 0) throw ConfigError("split_spec labels must be >= 0");
            if (!seen.insert(c).second) {
                throw ConfigError("label " + std::to_string(c) +
                                  " appears in more than one split_spec group");
            }
        }
    }
}

int stream_task_count(const StreamSpec& s) {
    if (s.kind == StreamSpec::Kind::synthetic) return s.num_tasks;
    return static_cast<int>(s.split_spec.size());
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void RunConfig::validate() const {
    if (stream.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    switch (stream.kind) {
        case StreamSpec::Kind::synthetic:
            if (stream.num_tasks < 1) throw ConfigError("num_tasks must be >= 1");
            if (stream.classes_per_task < 1) throw ConfigError("classes_per_task must be >= 1");
            if (stream.dim < 1) throw ConfigError("dim must be >= 1");
            if (!(stream.separation > 0.0)) throw ConfigError("separation must be positive");
            if (stream.samples_per_class < 2) {
                throw ConfigError("samples_per_class must be >= 2");
            }
            break;
        case StreamSpec::Kind::idx:
            if (stream.images_path.empty() || stream.labels_path.empty()) {
                throw ConfigError("idx streams need images and labels paths");
            }
            validate_split_spec(stream.split_spec);
            break;
        case StreamSpec::Kind::csv:
            if (stream.csv_path.empty()) throw ConfigError("csv streams need a path");
            validate_split_spec(stream.split_spec);
            break;
    }
    for (int h : hidden_dims) {
        if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
    }
    meta.validate();
    if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

TaskStream build_stream(const RunConfig& cfg, std::uint64_t run_seed) {
    const StreamSpec& s = cfg.stream;
    switch (s.kind) {
        case StreamSpec::Kind::synthetic:
            return make_synthetic_stream(s.num_tasks, s.classes_per_task, s.dim,
                                         s.separation, s.samples_per_class, run_seed,
                                         s.batch_size, cfg.protocol);
        case StreamSpec::Kind::idx:
            return ingest_idx(s.images_path, s.labels_path, s.split_spec, run_seed,
                              s.batch_size, cfg.protocol);
        case StreamSpec::Kind::csv:
            return ingest_csv(s.csv_path, s.split_spec, run_seed, s.batch_size,
                              cfg.protocol);
    }
    throw ConfigError("unhandled stream kind");
}

RunResult run_single(const RunConfig& cfg, Variant v, std::uint64_t seed,
                     const TrainObserver* observer) {
    const auto t0 = std::chrono::steady_clock::now();

    // The stream depends on the seed only, never the variant, so variants are
    // paired comparisons over identical data.
    TaskStream stream = build_stream(cfg, derive_seed(seed, "stream"));
    const int T = static_cast<int>(stream.tasks.size());

    std::vector<LayerSpec> specs;
    int in = stream.input_dim;
    for (std::size_t k = 0; k < cfg.hidden_dims.size(); ++k) {
        specs.push_back({"fc" + std::to_string(k + 1), in, cfg.hidden_dims[k],
                         Activation::relu});
        in = cfg.hidden_dims[k];
    }
    specs.push_back({"head", in, stream.num_classes_total, Activation::identity});

    ParamSet params = init_params(specs, derive_seed(seed, "init"));

    MetaConfig meta = cfg.meta;
    meta.variant = v;

    const int n_layers = static_cast<int>(specs.size());
    const int hidden = meta.gen_hidden > 0 ? meta.gen_hidden : 4 * n_layers;
    CoeffGenerator gen = (v == Variant::E_ML)
                             ? gen_init_scalar(n_layers, hidden, derive_seed(seed, "gen"))
                             : gen_init(n_layers, hidden, derive_seed(seed, "gen"));

    MemoryBuffer buffer;
    buffer.capacity = cfg.buffer_capacity;

    RunResult r;
    r.variant = variant_name(v);
    r.seed = seed;
    r.matrix.emplace(T);

    for (int i = 0; i < T; ++i) {
        TaskOutcome outcome = run_task(i, stream.tasks[i], params, gen, buffer, meta,
                                       stream.protocol, derive_seed(seed, "task", i),
                                       observer);
        params = std::move(outcome.fused_params);
        r.alpha_history.push_back(outcome.alphas_used.values);
        r.outer_loss_traces.push_back(std::move(outcome.outer_loss_trace));

        for (int j = 0; j <= i; ++j) {
            const Task& past = stream.tasks[j];
            const std::vector<int>* mask =
                stream.protocol == Protocol::TIL ? &past.classes : nullptr;
            r.matrix->record(i, j, accuracy(params, past.test, mask));
        }
    }

    r.acc = acc_metric(*r.matrix);
    if (T >= 2) {
        r.bwt_paper = bwt_metric(*r.matrix, BwtNorm::paper);
        r.bwt_standard = bwt_metric(*r.matrix, BwtNorm::standard);
    }

    const auto t1 = std::chrono::steady_clock::now();
    r.wall_ms = cfg.timing
                    ? std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()
                    : 0;
    return r;
}

std::vector<RunResult> run_experiment(const RunConfig& cfg) {
    cfg.validate();
    std::vector<RunResult> results;
    for (Variant v : cfg.variant_list()) {
        for (std::uint64_t seed : cfg.seeds) {
            try {
                results.push_back(run_single(cfg, v, seed));
            } catch (const std::exception& e) {
                RunResult r;
                r.variant = variant_name(v);
                r.seed = seed;
                r.ok = false;
                r.error = e.what();
                results.push_back(std::move(r));
            }
        }
    }
    return results;
}

namespace {

void write_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw IoError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
    }
}

ordered_json matrix_to_json(const AccMatrix& m) {
    ordered_json rows = ordered_json::array();
    for (int i = 0; i < m.size(); ++i) {
        ordered_json row = ordered_json::array();
        for (int j = 0; j < m.size(); ++j) {
            if (j <= i) {
                row.push_back(m.at(i, j));
            } else {
                row.push_back(nullptr);
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void emit_results(const std::vector<RunResult>& results, const std::string& dir,
                  const RunConfig& cfg) {
    if (results.empty()) throw ConfigError("no results to emit");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());

    write_atomic(fs::path(dir) / "config.json", config_to_json(cfg));

    for (const RunResult& r : results) {
        if (!r.ok) continue;
        ordered_json j;
        j["variant"] = r.variant;
        j["seed"] = r.seed;
        j["T"] = r.matrix ? r.matrix->size() : 0;
        j["R"] = r.matrix ? matrix_to_json(*r.matrix) : ordered_json::array();
        j["alpha_history"] = r.alpha_history;
        j["outer_loss_traces"] = r.outer_loss_traces;
        j["acc"] = r.acc;
        if (r.bwt_paper) {
            j["bwt_paper"] = *r.bwt_paper;
        } else {
            j["bwt_paper"] = nullptr;
        }
        if (r.bwt_standard) {
            j["bwt_standard"] = *r.bwt_standard;
        } else {
            j["bwt_standard"] = nullptr;
        }
        j["wall_ms"] = r.wall_ms;
        const std::string name =
            "rmatrix_" + r.variant + "_" + std::to_string(r.seed) + ".json";
        write_atomic(fs::path(dir) / name, j.dump(2) + "\n");
    }

    std::ostringstream csv;
    csv << "variant,seed,acc,bwt_paper,bwt_standard,wall_ms\n";
    for (const RunResult& r : results) {
        if (!r.ok) continue;
        csv << r.variant << ',' << r.seed << ',' << fmt_double(r.acc) << ','
            << (r.bwt_paper ? fmt_double(*r.bwt_paper) : "nan") << ','
            << (r.bwt_standard ? fmt_double(*r.bwt_standard) : "nan") << ','
            << r.wall_ms << '\n';
    }
    write_atomic(fs::path(dir) / "summary.csv", csv.str());
}

std::string config_to_json(const RunConfig& cfg) {
    ordered_json j;
    ordered_json s;
    s["kind"] = stream_kind_name(cfg.stream.kind);
    switch (cfg.stream.kind) {
        case StreamSpec::Kind::synthetic:
            s["num_tasks"] = cfg.stream.num_tasks;
            s["classes_per_task"] = cfg.stream.classes_per_task;
            s["dim"] = cfg.stream.dim;
            s["separation"] = cfg.stream.separation;
            s["samples_per_class"] = cfg.stream.samples_per_class;
            break;
        case StreamSpec::Kind::idx:
            s["images"] = cfg.stream.images_path;
            s["labels"] = cfg.stream.labels_path;
            s["split"] = cfg.stream.split_spec;
            break;
        case StreamSpec::Kind::csv:
            s["path"] = cfg.stream.csv_path;
            s["split"] = cfg.stream.split_spec;
            break;
    }
    s["batch_size"] = cfg.stream.batch_size;
    j["stream"] = std::move(s);

    j["protocol"] = protocol_name(cfg.protocol);
    j["hidden_dims"] = cfg.hidden_dims;

    ordered_json m;
    m["iteration_num"] = cfg.meta.iteration_num;
    m["meta_lr"] = cfg.meta.meta_lr;
    m["base_lr"] = cfg.meta.base_lr;
    m["base_epochs"] = cfg.meta.base_epochs;
    m["variant"] = variant_name(cfg.meta.variant);
    m["grad_sample"] = cfg.meta.grad_sample;
    m["buffer_batch"] = cfg.meta.buffer_batch;
    m["fixed_alpha_value"] = cfg.meta.fixed_alpha_value;
    m["gen_hidden"] = cfg.meta.gen_hidden;
    m["buffer_includes_current"] = cfg.meta.buffer_includes_current;
    m["refresh_features"] = cfg.meta.refresh_features;
    m["replay_base"] = cfg.meta.replay_base;
    m["feature_mode"] = cfg.meta.feature_mode == FeatureMode::mean ? "mean" : "mean_abs";
    m["normalize_feats"] = cfg.meta.normalize_feats;
    m["buffer_per_task"] = cfg.meta.buffer_per_task;
    m["buffer_policy"] =
        cfg.meta.buffer_policy == BufferPolicy::reservoir ? "reservoir" : "ring";
    j["meta"] = std::move(m);

    ordered_json vs = ordered_json::array();
    for (Variant v : cfg.variants) vs.push_back(variant_name(v));
    j["variants"] = std::move(vs);

    j["buffer_capacity"] = cfg.buffer_capacity;
    j["seeds"] = cfg.seeds;
    j["out_dir"] = cfg.out_dir;
    j["bwt_norm"] = bwt_norm_name(cfg.bwt_norm);
    j["timing"] = cfg.timing;
    return j.dump(2) + "\n";
}

namespace {

using nlohmann::json;

// Strict object reader: every key must be recognized, every type must match.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    ~ObjectReader() = default;

    bool has(const char* key) {
        touched_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void read(const char* key, T& out) {
        touched_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("bad value for '" + std::string(key) + "' in " + where_ +
                              ": " + e.what());
        }
    }

    void read_name(const char* key, std::string& out) { read(key, out); }

    const json& raw(const char* key) {
        touched_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!touched_.count(item.key())) {
                throw ConfigError("unknown key '" + item.key() + "' in " + where_);
            }
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> touched_;
};

}  // namespace

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    ObjectReader top(j, "config");

    if (top.has("stream")) {
        ObjectReader sr(top.raw("stream"), "stream");
        std::string kind = "synthetic";
        sr.read("kind", kind);
        cfg.stream.kind = stream_kind_from_name(kind);
        sr.read("num_tasks", cfg.stream.num_tasks);
        sr.read("classes_per_task", cfg.stream.classes_per_task);
        sr.read("dim", cfg.stream.dim);
        sr.read("separation", cfg.stream.separation);
        sr.read("samples_per_class", cfg.stream.samples_per_class);
        sr.read("batch_size", cfg.stream.batch_size);
        sr.read("images", cfg.stream.images_path);
        sr.read("labels", cfg.stream.labels_path);
        sr.read("path", cfg.stream.csv_path);
        sr.read("split", cfg.stream.split_spec);
        sr.finish();
    }

    if (top.has("protocol")) {
        std::string p;
        top.read("protocol", p);
        cfg.protocol = protocol_from_name(p);
    }
    top.read("hidden_dims", cfg.hidden_dims);

    bool per_task_given = false;
    if (top.has("meta")) {
        ObjectReader mr(top.raw("meta"), "meta");
        mr.read("iteration_num", cfg.meta.iteration_num);
        mr.read("meta_lr", cfg.meta.meta_lr);
        mr.read("base_lr", cfg.meta.base_lr);
        mr.read("base_epochs", cfg.meta.base_epochs);
        if (mr.has("variant")) {
            std::string v;
            mr.read("variant", v);
            cfg.meta.variant = variant_from_name(v);
        }
        mr.read("grad_sample", cfg.meta.grad_sample);
        mr.read("buffer_batch", cfg.meta.buffer_batch);
        mr.read("fixed_alpha_value", cfg.meta.fixed_alpha_value);
        mr.read("gen_hidden", cfg.meta.gen_hidden);
        mr.read("buffer_includes_current", cfg.meta.buffer_includes_current);
        mr.read("refresh_features", cfg.meta.refresh_features);
        mr.read("replay_base", cfg.meta.replay_base);
        if (mr.has("feature_mode")) {
            std::string f;
            mr.read("feature_mode", f);
            if (f == "mean") {
                cfg.meta.feature_mode = FeatureMode::mean;
            } else if (f == "mean_abs") {
                cfg.meta.feature_mode = FeatureMode::mean_abs;
            } else {
                throw ConfigError("unknown feature_mode '" + f + "'");
            }
        }
        mr.read("normalize_feats", cfg.meta.normalize_feats);
        if (mr.has("buffer_per_task")) {
            int v = 0;
            mr.read("buffer_per_task", v);
            if (v != 0) {
                cfg.meta.buffer_per_task = v;
                per_task_given = true;
            }
        }
        if (mr.has("buffer_policy")) {
            std::string b;
            mr.read("buffer_policy", b);
            if (b == "reservoir") {
                cfg.meta.buffer_policy = BufferPolicy::reservoir;
            } else if (b == "ring") {
                cfg.meta.buffer_policy = BufferPolicy::ring;
            } else {
                throw ConfigError("unknown buffer_policy '" + b + "'");
            }
        }
        mr.finish();
    }

    if (top.has("variants")) {
        std::vector<std::string> names;
        top.read("variants", names);
        cfg.variants.clear();
        for (const std::string& n : names) cfg.variants.push_back(variant_from_name(n));
    }
    top.read("buffer_capacity", cfg.buffer_capacity);
    top.read("seeds", cfg.seeds);
    top.read("out_dir", cfg.out_dir);
    if (top.has("bwt_norm")) {
        std::string n;
        top.read("bwt_norm", n);
        cfg.bwt_norm = bwt_norm_from_name(n);
    }
    top.read("timing", cfg.timing);
    top.finish();

    // When the config leaves the per-task quota unset, split the capacity
    // evenly across tasks.
    if (!per_task_given) {
        const int tasks = std::max(1, stream_task_count(cfg.stream));
        cfg.meta.buffer_per_task = std::max<int>(
            1, static_cast<int>(cfg.buffer_capacity) / tasks);
    }

    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("error reading config '" + path + "'");
    return config_from_json(buf.str());
}

}  // namespace metamix
