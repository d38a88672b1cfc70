#include "metamix/streams.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "metamix/rng.hpp"

namespace metamix {

namespace {

struct Example {
    std::vector<double> input;
    int label = 0;
};

// Shuffle, batch and split per-task example lists into a TaskStream.
TaskStream assemble_stream(std::vector<std::vector<Example>> train_per_task,
                           std::vector<std::vector<Example>> test_per_task,
                           const std::vector<std::vector<int>>& class_sets, int dim,
                           int batch_size, Protocol protocol, std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    TaskStream stream;
    stream.protocol = protocol;
    stream.input_dim = dim;
    int max_class = -1;
    std::set<int> seen;
    for (const auto& cs : class_sets) {
        for (int c : cs) {
            if (c < 0) throw ConfigError("negative class id in split");
            if (!seen.insert(c).second) {
                throw ConfigError("class " + std::to_string(c) +
                                  " appears in two tasks");
            }
            max_class = std::max(max_class, c);
        }
    }
    stream.num_classes_total = max_class + 1;

    for (std::size_t t = 0; t < class_sets.size(); ++t) {
        Task task;
        task.task_id = static_cast<int>(t);
        task.classes = class_sets[t];
        std::sort(task.classes.begin(), task.classes.end());

        Rng rng(derive_seed(seed, "task-shuffle", t));
        auto& tr = train_per_task[t];
        rng.shuffle(tr);

        auto cut = [&](const std::vector<Example>& ex) {
            std::vector<Batch> batches;
            for (std::size_t start = 0; start < ex.size(); start += batch_size) {
                const std::size_t end = std::min(ex.size(), start + batch_size);
                Batch b;
                b.dim = dim;
                b.task_id = task.task_id;
                b.inputs.reserve((end - start) * dim);
                for (std::size_t i = start; i < end; ++i) {
                    b.inputs.insert(b.inputs.end(), ex[i].input.begin(), ex[i].input.end());
                    b.labels.push_back(ex[i].label);
                }
                batches.push_back(std::move(b));
            }
            return batches;
        };
        task.train = cut(tr);
        task.test = cut(test_per_task[t]);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IngestError("truncated read in " + path, offset);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

TaskStream split_examples(std::vector<Example> all, int dim,
                          const std::vector<std::vector<int>>& split_spec,
                          std::uint64_t seed, int batch_size, Protocol protocol,
                          const std::string& source) {
    if (split_spec.empty()) throw ConfigError("empty split spec");
    std::vector<int> task_of_class;
    for (std::size_t t = 0; t < split_spec.size(); ++t) {
        for (int c : split_spec[t]) {
            if (c >= static_cast<int>(task_of_class.size())) {
                task_of_class.resize(static_cast<std::size_t>(c) + 1, -1);
            }
            task_of_class[static_cast<std::size_t>(c)] = static_cast<int>(t);
        }
    }

    Rng rng(derive_seed(seed, "ingest-shuffle"));
    rng.shuffle(all);

    std::vector<std::vector<Example>> train(split_spec.size()), test(split_spec.size());
    std::vector<std::vector<Example>> per_task(split_spec.size());
    for (Example& ex : all) {
        const int c = ex.label;
        if (c < 0 || c >= static_cast<int>(task_of_class.size()) ||
            task_of_class[static_cast<std::size_t>(c)] < 0) {
            throw DataError("label " + std::to_string(c) + " in " + source +
                            " is not covered by the split spec");
        }
        per_task[static_cast<std::size_t>(task_of_class[static_cast<std::size_t>(c)])]
            .push_back(std::move(ex));
    }
    for (std::size_t t = 0; t < per_task.size(); ++t) {
        auto& ex = per_task[t];
        const std::size_t n_train = (ex.size() * 8) / 10;
        train[t].assign(ex.begin(), ex.begin() + n_train);
        test[t].assign(ex.begin() + n_train, ex.end());
    }
    return assemble_stream(std::move(train), std::move(test), split_spec, dim,
                           batch_size, protocol, seed);
}

}  // namespace

TaskStream make_synthetic_stream(int num_tasks, int classes_per_task, int dim,
                                 double separation, int samples_per_class,
                                 std::uint64_t seed, int batch_size,
                                 Protocol protocol) {
    if (num_tasks < 1 || classes_per_task < 1 || dim < 1 || samples_per_class < 1) {
        throw ConfigError("synthetic stream dimensions must be positive");
    }
    if (separation <= 0.0) throw ConfigError("separation must be positive");

    const int num_classes = num_tasks * classes_per_task;
    Rng rng(derive_seed(seed, "means"));

    // Place class means with pairwise distance >= separation, growing the
    // sampling box if a placement round fails.
    std::vector<std::vector<double>> means;
    double box = separation * std::max(1.0, std::pow(static_cast<double>(num_classes),
                                                     1.0 / static_cast<double>(dim)));
    bool placed = false;
    for (int round = 0; round < 8 && !placed; ++round, box *= 1.5) {
        means.clear();
        bool ok = true;
        for (int c = 0; c < num_classes && ok; ++c) {
            bool found = false;
            for (int attempt = 0; attempt < 200 && !found; ++attempt) {
                std::vector<double> m(static_cast<std::size_t>(dim));
                for (double& v : m) v = rng.uniform(-box, box);
                found = true;
                for (const auto& other : means) {
                    double d2 = 0.0;
                    for (int i = 0; i < dim; ++i) {
                        const double diff = m[static_cast<std::size_t>(i)] - other[static_cast<std::size_t>(i)];
                        d2 += diff * diff;
                    }
                    if (d2 < separation * separation) {
                        found = false;
                        break;
                    }
                }
                if (found) means.push_back(std::move(m));
            }
            ok = found;
        }
        placed = ok;
    }
    if (!placed) {
        throw ConfigError("could not place " + std::to_string(num_classes) +
                          " class means at separation " + std::to_string(separation));
    }

    const int n_train = (samples_per_class * 8) / 10;
    std::vector<std::vector<Example>> train(static_cast<std::size_t>(num_tasks));
    std::vector<std::vector<Example>> test(static_cast<std::size_t>(num_tasks));
    std::vector<std::vector<int>> class_sets(static_cast<std::size_t>(num_tasks));

    for (int c = 0; c < num_classes; ++c) {
        const int t = c / classes_per_task;
        class_sets[static_cast<std::size_t>(t)].push_back(c);
        Rng crng(derive_seed(seed, "class-samples", static_cast<std::uint64_t>(c)));
        for (int s = 0; s < samples_per_class; ++s) {
            Example ex;
            ex.label = c;
            ex.input.resize(static_cast<std::size_t>(dim));
            for (int i = 0; i < dim; ++i) {
                ex.input[static_cast<std::size_t>(i)] =
                    means[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] + crng.normal();
            }
            auto& dst = (s < n_train) ? train[static_cast<std::size_t>(t)]
                                      : test[static_cast<std::size_t>(t)];
            dst.push_back(std::move(ex));
        }
    }
    return assemble_stream(std::move(train), std::move(test), class_sets, dim,
                           batch_size, protocol, seed);
}

TaskStream ingest_idx(const std::string& images_path, const std::string& labels_path,
                      const std::vector<std::vector<int>>& split_spec,
                      std::uint64_t seed, int batch_size, Protocol protocol) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IngestError("cannot open " + images_path, 0);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IngestError("cannot open " + labels_path, 0);

    const std::uint32_t img_magic = read_u32_be(img, images_path, 0);
    if (img_magic != 0x00000803u) {
        throw IngestError("bad image magic in " + images_path, 0);
    }
    const std::uint32_t lab_magic = read_u32_be(lab, labels_path, 0);
    if (lab_magic != 0x00000801u) {
        throw IngestError("bad label magic in " + labels_path, 0);
    }
    const std::uint32_t n_img = read_u32_be(img, images_path, 4);
    const std::uint32_t rows = read_u32_be(img, images_path, 8);
    const std::uint32_t cols = read_u32_be(img, images_path, 12);
    const std::uint32_t n_lab = read_u32_be(lab, labels_path, 4);
    if (n_img != n_lab) {
        throw IngestError("image count " + std::to_string(n_img) + " != label count " +
                              std::to_string(n_lab) + " in " + labels_path,
                          4);
    }
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    if (pixels == 0) throw IngestError("zero image dimensions in " + images_path, 8);

    std::vector<Example> all;
    all.reserve(n_img);
    std::vector<unsigned char> raw(pixels);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
        if (!img) {
            throw IngestError("truncated image payload in " + images_path,
                              16 + static_cast<std::size_t>(i) * pixels);
        }
        char lbl = 0;
        lab.read(&lbl, 1);
        if (!lab) {
            throw IngestError("truncated label payload in " + labels_path,
                              8 + static_cast<std::size_t>(i));
        }
        Example ex;
        ex.label = static_cast<int>(static_cast<unsigned char>(lbl));
        ex.input.resize(pixels);
        for (std::size_t px = 0; px < pixels; ++px) {
            ex.input[px] = static_cast<double>(raw[px]) / 255.0;
        }
        all.push_back(std::move(ex));
    }
    return split_examples(std::move(all), static_cast<int>(pixels), split_spec, seed,
                          batch_size, protocol, images_path);
}

TaskStream ingest_csv(const std::string& path,
                      const std::vector<std::vector<int>>& split_spec,
                      std::uint64_t seed, int batch_size, Protocol protocol) {
    std::ifstream f(path);
    if (!f) throw IngestError("cannot open " + path, 0);
    std::string line;
    if (!std::getline(f, line)) throw IngestError("empty file " + path, 0);
    if (line.rfind("label,", 0) != 0) {
        throw IngestError("expected header starting with 'label,' in " + path, 0);
    }

    std::vector<Example> all;
    int dim = -1;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Example ex;
        if (!std::getline(ss, cell, ',')) {
            throw DataError("missing label on line " + std::to_string(line_no) + " of " + path);
        }
        try {
            ex.label = std::stoi(cell);
        } catch (const std::exception&) {
            throw DataError("bad label '" + cell + "' on line " + std::to_string(line_no));
        }
        while (std::getline(ss, cell, ',')) {
            try {
                ex.input.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("bad feature '" + cell + "' on line " + std::to_string(line_no));
            }
        }
        if (dim < 0) dim = static_cast<int>(ex.input.size());
        if (static_cast<int>(ex.input.size()) != dim || dim == 0) {
            throw DataError("row width mismatch on line " + std::to_string(line_no));
        }
        all.push_back(std::move(ex));
    }
    if (all.empty()) throw DataError("no data rows in " + path);
    return split_examples(std::move(all), dim, split_spec, seed, batch_size, protocol, path);
}

MemoryBuffer buffer_add(const MemoryBuffer& buf, const std::vector<BufferEntry>& examples,
                        BufferPolicy policy, std::uint64_t seed) {
    if (buf.capacity < 1) throw ConfigError("buffer capacity must be >= 1");
    MemoryBuffer out = buf;
    Rng rng(seed);
    for (const BufferEntry& ex : examples) {
        out.seen_count += 1;
        if (out.entries.size() < out.capacity) {
            out.entries.push_back(ex);
            continue;
        }
        if (policy == BufferPolicy::ring) {
            out.entries.erase(out.entries.begin());
            out.entries.push_back(ex);
        } else {
            // Classic reservoir step over the lifetime stream.
            const std::uint64_t j = rng.below(out.seen_count);
            if (j < out.capacity) {
                out.entries[static_cast<std::size_t>(j)] = ex;
            }
        }
    }
    return out;
}

Batch buffer_sample(const MemoryBuffer& buf, int k, std::uint64_t seed) {
    if (buf.empty()) throw ProtocolError("sampling an empty buffer");
    if (k < 1) throw ConfigError("sample size must be >= 1");
    Rng rng(seed);
    Batch b;
    b.dim = static_cast<int>(buf.entries.front().input.size());
    b.inputs.reserve(static_cast<std::size_t>(k) * b.dim);
    b.labels.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const BufferEntry& e = buf.entries[static_cast<std::size_t>(rng.below(buf.entries.size()))];
        b.inputs.insert(b.inputs.end(), e.input.begin(), e.input.end());
        b.labels.push_back(e.label);
    }
    return b;
}

}  // namespace metamix
