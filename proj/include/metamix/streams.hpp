#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metamix/net.hpp"

namespace metamix {

enum class Protocol { TIL, CIL, OCIL };

struct Task {
    int task_id = 0;
    std::vector<int> classes;
    std::vector<Batch> train;
    std::vector<Batch> test;

    std::size_t train_example_count() const {
        std::size_t n = 0;
        for (const Batch& b : train) n += static_cast<std::size_t>(b.rows());
        return n;
    }
};

// Ordered tasks with disjoint class sets. Under OCIL each training example
// sits in exactly one batch; the driver makes a single pass.
struct TaskStream {
    std::vector<Task> tasks;
    Protocol protocol = Protocol::CIL;
    int num_classes_total = 0;
    int input_dim = 0;
};

struct BufferEntry {
    std::vector<double> input;
    int label = 0;
    int task_id = -1;
};

// Replay store shared between meta-validation and (optionally) base-training
// replay. Entry count never exceeds capacity.
struct MemoryBuffer {
    std::size_t capacity = 0;
    std::vector<BufferEntry> entries;
    std::uint64_t seen_count = 0;  // examples ever offered (reservoir bookkeeping)

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

enum class BufferPolicy { reservoir, ring };

// Gaussian class clouds with unit variance and pairwise mean distance >=
// separation; 80/20 train/test split, deterministic per seed. Task t owns
// classes [t*classes_per_task, (t+1)*classes_per_task).
TaskStream make_synthetic_stream(int num_tasks, int classes_per_task, int dim,
                                 double separation, int samples_per_class,
                                 std::uint64_t seed, int batch_size = 32,
                                 Protocol protocol = Protocol::CIL);

// IDX image/label pair (big-endian, magic 0x00000803 / 0x00000801). Pixels
// scaled to [0,1]; tasks follow split_spec; every label in the files must be
// covered by split_spec.
TaskStream ingest_idx(const std::string& images_path, const std::string& labels_path,
                      const std::vector<std::vector<int>>& split_spec,
                      std::uint64_t seed = 0, int batch_size = 32,
                      Protocol protocol = Protocol::CIL);

// CSV with header `label,f0,f1,...`; same task semantics as ingest_idx.
TaskStream ingest_csv(const std::string& path,
                      const std::vector<std::vector<int>>& split_spec,
                      std::uint64_t seed = 0, int batch_size = 32,
                      Protocol protocol = Protocol::CIL);

// Offer examples to the buffer. reservoir keeps a uniform sample of the
// lifetime stream; ring evicts oldest-first.
MemoryBuffer buffer_add(const MemoryBuffer& buf, const std::vector<BufferEntry>& examples,
                        BufferPolicy policy, std::uint64_t seed);

// k uniform draws with replacement, as one batch. k >= 1; buffer non-empty.
Batch buffer_sample(const MemoryBuffer& buf, int k, std::uint64_t seed);

}  // namespace metamix
