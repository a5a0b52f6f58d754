#include "ct/queues.hpp"

#include <cmath>
#include <string>

namespace ct {

namespace {

const char* kind_name(KeyKind kind) { return kind == KeyKind::kImage ? "image" : "patch"; }

void check_normalized(const KeyMatrix& key) {
    for (int r = 0; r < key.rows; ++r) {
        double s = 0.0;
        const double* row = key.row(r);
        for (int c = 0; c < key.cols; ++c) s += row[c] * row[c];
        const double norm = std::sqrt(s);
        if (std::abs(norm - 1.0) > 1e-8) {
            throw ContractError("enqueue: key row " + std::to_string(r) + " has norm " +
                                std::to_string(norm) + ", expected 1 within 1e-8");
        }
    }
}

}  // namespace

ClassQueue::ClassQueue(int class_id, KeyKind kind, int capacity, int key_rows, int key_cols)
    : class_id_(class_id), kind_(kind), capacity_(capacity), key_rows_(key_rows),
      key_cols_(key_cols) {
    if (capacity <= 0) throw ConfigError("ClassQueue: capacity must be positive");
    if (key_rows <= 0 || key_cols <= 0) throw ConfigError("ClassQueue: key dims must be positive");
    if (kind == KeyKind::kImage && key_rows != 1) {
        throw ConfigError("ClassQueue: image-level keys are single rows");
    }
}

void ClassQueue::enqueue(KeyMatrix key, long step) {
    if (key.rows != key_rows_ || key.cols != key_cols_) {
        throw ContractError(std::string("enqueue: ") + kind_name(kind_) + "-level queue expects " +
                            std::to_string(key_rows_) + "x" + std::to_string(key_cols_) +
                            " keys, got " + std::to_string(key.rows) + "x" +
                            std::to_string(key.cols));
    }
    if (static_cast<std::size_t>(key.rows) * key.cols != key.values.size()) {
        throw ContractError("enqueue: key value count does not match its dims");
    }
    check_normalized(key);
    entries_.push_back(Entry{std::move(key), step});
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

QueueGroup::QueueGroup(KeyKind kind, int num_classes, int capacity, int key_rows, int key_cols)
    : kind_(kind) {
    if (num_classes <= 0) throw ConfigError("QueueGroup: need at least one class");
    queues_.reserve(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        queues_.emplace_back(c, kind, capacity, key_rows, key_cols);
    }
}

ClassQueue& QueueGroup::for_class(int label) {
    if (label < 0 || label >= num_classes()) {
        throw ContractError("QueueGroup: class " + std::to_string(label) + " out of range");
    }
    return queues_[label];
}

const ClassQueue& QueueGroup::for_class(int label) const {
    return const_cast<QueueGroup*>(this)->for_class(label);
}

void QueueGroup::fill_random(std::mt19937_64& rng) {
    for (auto& q : queues_) {
        while (q.size() < q.capacity()) {
            q.enqueue(random_unit_key(rng, q.key_rows(), q.key_cols()), -1);
        }
    }
}

KeyMatrix random_unit_key(std::mt19937_64& rng, int rows, int cols) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    KeyMatrix key;
    key.rows = rows;
    key.cols = cols;
    key.values.resize(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        double* row = key.values.data() + static_cast<std::size_t>(r) * cols;
        do {
            s = 0.0;
            for (int c = 0; c < cols; ++c) {
                row[c] = gauss(rng);
                s += row[c] * row[c];
            }
        } while (s < 1e-12);
        const double inv = 1.0 / std::sqrt(s);
        for (int c = 0; c < cols; ++c) row[c] *= inv;
    }
    return key;
}

namespace {

std::vector<int> draw_without_replacement(int total, int k, std::mt19937_64& rng) {
    std::vector<int> idx(total);
    for (int i = 0; i < total; ++i) idx[i] = i;
    if (k >= total) return idx;
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, total - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace

SampledKeys sample_positive_negative(const QueueGroup& queues, int label, int k_plus,
                                     int k_minus, std::mt19937_64& rng) {
    const ClassQueue& pos_queue = queues.for_class(label);
    if (pos_queue.empty()) {
        throw NotWarmError("sample: queue for class " + std::to_string(label) + " is empty");
    }
    std::vector<const KeyMatrix*> neg_pool;
    for (int c = 0; c < queues.num_classes(); ++c) {
        if (c == label) continue;
        for (const auto& e : queues.for_class(c).entries()) neg_pool.push_back(&e.key);
    }
    if (neg_pool.empty()) {
        throw NotWarmError("sample: all queues for classes other than " + std::to_string(label) +
                           " are empty");
    }

    SampledKeys out;
    const auto pos_idx = draw_without_replacement(pos_queue.size(), k_plus, rng);
    out.positives.reserve(pos_idx.size());
    for (int i : pos_idx) out.positives.push_back(pos_queue.entries()[i].key);

    const auto neg_idx =
        draw_without_replacement(static_cast<int>(neg_pool.size()), k_minus, rng);
    out.negatives.reserve(neg_idx.size());
    for (int i : neg_idx) out.negatives.push_back(*neg_pool[i]);
    return out;
}

}  // namespace ct
