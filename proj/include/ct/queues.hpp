#pragma once

#include <deque>
#include <random>
#include <vector>

#include "ct/errors.hpp"

namespace ct {

enum class KeyKind { kImage, kPatch };

// Detached key values as stored in a queue: image-level keys are a single
// row, patch-level keys are the full R x d block of one example.
struct KeyMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    const double* row(int r) const { return values.data() + static_cast<std::size_t>(r) * cols; }
};

// Fixed-capacity FIFO of unit-normalized keys for one class.
class ClassQueue {
public:
    ClassQueue(int class_id, KeyKind kind, int capacity, int key_rows, int key_cols);

    // Appends a key produced by the key model; evicts FIFO past capacity.
    // The key must already be normalized (row norms within 1e-8 of 1).
    void enqueue(KeyMatrix key, long step);

    int class_id() const { return class_id_; }
    KeyKind kind() const { return kind_; }
    int capacity() const { return capacity_; }
    int key_rows() const { return key_rows_; }
    int key_cols() const { return key_cols_; }
    int size() const { return static_cast<int>(entries_.size()); }
    bool empty() const { return entries_.empty(); }

    struct Entry {
        KeyMatrix key;
        long step = 0;
    };
    const std::deque<Entry>& entries() const { return entries_; }

private:
    int class_id_;
    KeyKind kind_;
    int capacity_;
    int key_rows_;
    int key_cols_;
    std::deque<Entry> entries_;
};

// One queue per class, all of one kind.
class QueueGroup {
public:
    QueueGroup(KeyKind kind, int num_classes, int capacity, int key_rows, int key_cols);

    ClassQueue& for_class(int label);
    const ClassQueue& for_class(int label) const;
    int num_classes() const { return static_cast<int>(queues_.size()); }
    KeyKind kind() const { return kind_; }

    // Fills every queue to capacity with random unit keys (the cold-start
    // default; see sample_positive_negative for the skip-until-warm variant).
    void fill_random(std::mt19937_64& rng);

private:
    KeyKind kind_;
    std::vector<ClassQueue> queues_;
};

struct SampledKeys {
    std::vector<KeyMatrix> positives;
    std::vector<KeyMatrix> negatives;
};

// Uniform without-replacement draws: positives from the label's queue,
// negatives from the union of all other-class queues. Returns everything
// available when a side has fewer than requested. Throws NotWarmError when
// either side is empty.
SampledKeys sample_positive_negative(const QueueGroup& queues, int label, int k_plus,
                                     int k_minus, std::mt19937_64& rng);

KeyMatrix random_unit_key(std::mt19937_64& rng, int rows, int cols);

}  // namespace ct
