#include "ct/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "ct/io.hpp"
#include "ct/rng.hpp"

namespace ct {

namespace {

struct MethodInfo {
    Method method;
    const char* name;
};

constexpr MethodInfo kMethods[] = {
    {Method::kScratch, "scratch"},   {Method::kVanillaFt, "vanilla_ft"},
    {Method::kLfOnly, "lf_only"},    {Method::kLfLr, "lf_lr"},
    {Method::kLfLs, "lf_ls"},        {Method::kFull, "full"},
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string method_name(Method m) {
    for (const auto& info : kMethods) {
        if (info.method == m) return info.name;
    }
    throw ContractError("method_name: unknown method");
}

Method method_from_string(const std::string& name) {
    for (const auto& info : kMethods) {
        if (name == info.name) return info.method;
    }
    throw ConfigError("unknown method '" + name +
                      "' (expected scratch|vanilla_ft|lf_only|lf_lr|lf_ls|full)");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = {Method::kScratch, Method::kVanillaFt,
                                                Method::kLfOnly,  Method::kLfLr,
                                                Method::kLfLs,    Method::kFull};
    return methods;
}

void TrainConfig::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("TrainConfig: alpha, beta must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("TrainConfig: tau must be positive");
    if (!(ema_momentum > 0.0) || !(ema_momentum < 1.0)) {
        throw ConfigError("TrainConfig: ema_momentum must lie in (0, 1)");
    }
    if (queue_capacity <= 0 || rare_count <= 0 || k_plus <= 0 || k_minus <= 0) {
        throw ConfigError("TrainConfig: queue sizes and R must be positive");
    }
    if (grid < 1 || cell < 1 || channels <= 0 || d_patch <= 0 || d_z <= 0) {
        throw ConfigError("TrainConfig: dimensions must be positive");
    }
    if (channels % 8 != 0) throw ConfigError("TrainConfig: channels must be divisible by 8");
    if (rare_count > channels) throw ConfigError("TrainConfig: R must not exceed channels");
    if (pretrain_epochs < 0 || finetune_epochs < 0 || iters_per_epoch < 0 || batch_size <= 0) {
        throw ConfigError("TrainConfig: schedule fields invalid");
    }
    if (!(lr > 0.0) || sgd_momentum < 0.0 || sgd_momentum >= 1.0) {
        throw ConfigError("TrainConfig: lr must be positive, sgd_momentum in [0, 1)");
    }
}

bool TrainConfig::use_contrastive() const {
    return method == Method::kLfOnly || method == Method::kLfLr || method == Method::kLfLs ||
           method == Method::kFull;
}

double TrainConfig::effective_alpha() const {
    return (method == Method::kLfLr || method == Method::kFull) ? alpha : 0.0;
}

double TrainConfig::effective_beta() const {
    return (method == Method::kLfLs || method == Method::kFull) ? beta : 0.0;
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::json j{{"alpha", c.alpha},
                     {"beta", c.beta},
                     {"tau", c.tau},
                     {"ema_momentum", c.ema_momentum},
                     {"queue_capacity", c.queue_capacity},
                     {"rare_count", c.rare_count},
                     {"k_plus", c.k_plus},
                     {"k_minus", c.k_minus},
                     {"grid", c.grid},
                     {"cell", c.cell},
                     {"channels", c.channels},
                     {"d_patch", c.d_patch},
                     {"d_z", c.d_z},
                     {"pretrain_epochs", c.pretrain_epochs},
                     {"finetune_epochs", c.finetune_epochs},
                     {"iters_per_epoch", c.iters_per_epoch},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"sgd_momentum", c.sgd_momentum},
                     {"method", method_name(c.method)},
                     {"seed", c.seed},
                     {"supcon_positives_in_denominator", c.supcon_positives_in_denominator},
                     {"channel_attention_softmax", c.channel_attention_softmax},
                     {"sample_zhat_in_train", c.sample_zhat_in_train},
                     {"phi1_consumes_aggregate", c.phi1_consumes_aggregate},
                     {"eval_via_front_door", c.eval_via_front_door},
                     {"queue_warm_start_random", c.queue_warm_start_random},
                     {"classifier_bias", c.classifier_bias}};
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    TrainConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.tau = j.value("tau", c.tau);
    c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.rare_count = j.value("rare_count", c.rare_count);
    c.k_plus = j.value("k_plus", c.k_plus);
    c.k_minus = j.value("k_minus", c.k_minus);
    c.grid = j.value("grid", c.grid);
    c.cell = j.value("cell", c.cell);
    c.channels = j.value("channels", c.channels);
    c.d_patch = j.value("d_patch", c.d_patch);
    c.d_z = j.value("d_z", c.d_z);
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
    c.iters_per_epoch = j.value("iters_per_epoch", c.iters_per_epoch);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.sgd_momentum = j.value("sgd_momentum", c.sgd_momentum);
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.supcon_positives_in_denominator =
        j.value("supcon_positives_in_denominator", c.supcon_positives_in_denominator);
    c.channel_attention_softmax = j.value("channel_attention_softmax", c.channel_attention_softmax);
    c.sample_zhat_in_train = j.value("sample_zhat_in_train", c.sample_zhat_in_train);
    c.phi1_consumes_aggregate = j.value("phi1_consumes_aggregate", c.phi1_consumes_aggregate);
    c.eval_via_front_door = j.value("eval_via_front_door", c.eval_via_front_door);
    c.queue_warm_start_random = j.value("queue_warm_start_random", c.queue_warm_start_random);
    c.classifier_bias = j.value("classifier_bias", c.classifier_bias);
    return c;
}

// ---------------------------------------------------------------------------
// Shared forward helpers.

namespace {

NetConfig net_config(const TrainConfig& cfg, int num_classes) {
    NetConfig nc;
    nc.geom = GridGeometry{cfg.grid, cfg.cell};
    nc.channels = cfg.channels;
    nc.d_patch = cfg.d_patch;
    nc.d_z = cfg.d_z;
    nc.num_classes = num_classes;
    nc.classifier_bias = cfg.classifier_bias;
    nc.channel_attention_softmax = cfg.channel_attention_softmax;
    nc.phi1_consumes_aggregate = cfg.phi1_consumes_aggregate;
    return nc;
}

// Block-averaging matrix: pooled = F_batch (C x N*B) * avg (N*B x B).
TensorPtr make_avg_matrix(int cells, int batch) {
    std::vector<double> data(static_cast<std::size_t>(cells) * batch * batch, 0.0);
    const double w = 1.0 / cells;
    for (int b = 0; b < batch; ++b) {
        for (int n = 0; n < cells; ++n) {
            data[static_cast<std::size_t>(b * cells + n) * batch + b] = w;
        }
    }
    return make_tensor({cells * batch, batch}, std::move(data));
}

// Differentiable column slice [start, start+len) via transpose + gather.
TensorPtr slice_cols(const TensorPtr& t, int start, int len) {
    std::vector<int> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    return transpose(gather_rows(transpose(t), idx));
}

// Mean of -log p[label] over the batch; probs is B x K.
TensorPtr batch_cross_entropy(const TensorPtr& probs, const std::vector<int>& labels) {
    const int b = probs->shape[0], k = probs->shape[1];
    std::vector<double> mask(static_cast<std::size_t>(b) * k, 0.0);
    for (int i = 0; i < b; ++i) mask[static_cast<std::size_t>(i) * k + labels[i]] = 1.0;
    auto picked = sum_axis(mul(probs, make_tensor({b, k}, std::move(mask))), 1);  // B x 1
    auto eps = full({b, 1}, 1e-12);
    auto clamped = add(relu(sub(picked, eps)), eps);
    return scalar_mul(mean_pool_axis(log(clamped), 0), -1.0);
}

struct BatchForward {
    TensorPtr fmap;    // C x N*B
    TensorPtr logits;  // K x B
};

BatchForward forward_batch(const Encoder& encoder, const Classifier& classifier,
                           const Dataset& ds, const std::vector<int>& batch_idx) {
    std::vector<const std::vector<double>*> images;
    images.reserve(batch_idx.size());
    for (int i : batch_idx) images.push_back(&ds.examples[i].pixels);
    BatchForward out;
    out.fmap = encoder.forward_cells(cells_of_images(images, encoder.geometry()));
    auto pooled = matmul(out.fmap, make_avg_matrix(encoder.geometry().num_cells(),
                                                   static_cast<int>(batch_idx.size())));
    out.logits = classifier.forward_pooled(pooled);
    return out;
}

int argmax_column(const TensorPtr& logits, int col) {
    const int k = logits->shape[0], b = logits->shape[1];
    int best = 0;
    for (int c = 1; c < k; ++c) {
        if (logits->data[static_cast<std::size_t>(c) * b + col] >
            logits->data[static_cast<std::size_t>(best) * b + col]) {
            best = c;
        }
    }
    return best;
}

double evaluate_classifier(const Encoder& encoder, const Classifier& classifier,
                           const Dataset& ds) {
    NoTapeScope no_tape;
    const int n = static_cast<int>(ds.examples.size());
    if (n == 0) throw ContractError("evaluate: empty dataset");
    const int chunk = 256;
    long correct = 0;
    for (int start = 0; start < n; start += chunk) {
        const int len = std::min(chunk, n - start);
        std::vector<int> idx(len);
        std::iota(idx.begin(), idx.end(), start);
        const auto fwd = forward_batch(encoder, classifier, ds, idx);
        for (int i = 0; i < len; ++i) {
            correct += argmax_column(fwd.logits, i) == ds.examples[start + i].label;
        }
    }
    return static_cast<double>(correct) / n;
}

double evaluate_front_door(const Model& model, const Dataset& ds) {
    NoTapeScope no_tape;
    const int n = static_cast<int>(ds.examples.size());
    if (n == 0) throw ContractError("evaluate: empty dataset");
    long correct = 0;
    for (int i = 0; i < n; ++i) {
        auto fmap = encode(model.encoder, ds.examples[i].pixels);
        auto out = front_door_forward(model.head, fmap, RunMode::kEval);
        int best = 0;
        for (int c = 1; c < model.cfg.num_classes; ++c) {
            if (out.probabilities->data[c] > out.probabilities->data[best]) best = c;
        }
        correct += best == ds.examples[i].label;
    }
    return static_cast<double>(correct) / n;
}

std::vector<int> epoch_batch(const std::vector<int>& perm, int iter, int batch_size) {
    const int n = static_cast<int>(perm.size());
    std::vector<int> out(batch_size);
    for (int j = 0; j < batch_size; ++j) out[j] = perm[(iter * batch_size + j) % n];
    return out;
}

int resolve_iters(const TrainConfig& cfg, int dataset_size) {
    if (cfg.iters_per_epoch > 0) return cfg.iters_per_epoch;
    return (dataset_size + cfg.batch_size - 1) / cfg.batch_size;
}

}  // namespace

double evaluate(const Model& model, const Dataset& dataset, bool via_front_door) {
    if (via_front_door) return evaluate_front_door(model, dataset);
    return evaluate_classifier(model.encoder, model.classifier, dataset);
}

// ---------------------------------------------------------------------------
// Pretraining.

PretrainResult pretrain(const TrainConfig& cfg, const Dataset& pretrain_set) {
    cfg.validate();
    if (pretrain_set.examples.empty()) throw ContractError("pretrain: empty dataset");

    auto init_rng = make_rng(cfg.seed, RngStream::kParamInit);
    Model model(net_config(cfg, pretrain_set.num_classes));
    model.init(init_rng);

    std::vector<TensorPtr> trainable;
    for (auto& [name, t] : model.encoder.named_params("")) {
        (void)name;
        trainable.push_back(t);
    }
    for (auto& [name, t] : model.classifier.named_params("")) {
        (void)name;
        trainable.push_back(t);
    }

    PretrainResult result{std::move(model), {}};
    result.epoch_accuracy.push_back(
        evaluate_classifier(result.model.encoder, result.model.classifier, pretrain_set));

    auto batch_rng = make_rng(cfg.seed, RngStream::kBatchOrder);
    const int n = static_cast<int>(pretrain_set.examples.size());
    const int iters = resolve_iters(cfg, n);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);

    Tape tape;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), batch_rng);
        for (int it = 0; it < iters; ++it) {
            const auto batch = epoch_batch(perm, it, cfg.batch_size);
            std::vector<int> labels(batch.size());
            for (std::size_t j = 0; j < batch.size(); ++j) {
                labels[j] = pretrain_set.examples[batch[j]].label;
            }
            TapeScope scope(tape);
            const auto fwd =
                forward_batch(result.model.encoder, result.model.classifier, pretrain_set, batch);
            auto probs = softmax_rows(transpose(fwd.logits));
            auto loss = batch_cross_entropy(probs, labels);
            if (!std::isfinite(loss->scalar())) {
                throw RunError("pretrain: loss is not finite at epoch " + std::to_string(epoch) +
                               " iter " + std::to_string(it));
            }
            tape.backward(loss);
            sgd_step(trainable, cfg.lr, cfg.sgd_momentum);
            tape.clear();
        }
        result.epoch_accuracy.push_back(
            evaluate_classifier(result.model.encoder, result.model.classifier, pretrain_set));
    }
    return result;
}

void save_checkpoint(const std::string& path, const Model& model) {
    NamedParams params = model.encoder.named_params("encoder.");
    for (auto& p : model.classifier.named_params("classifier.")) params.push_back(p);
    save_params(path, params);
}

// ---------------------------------------------------------------------------
// Fine-tuning.

namespace {

TensorPtr key_to_tensor(const KeyMatrix& key) {
    return make_tensor({key.rows, key.cols}, key.values);
}

// Normalizes a raw vector; returns empty when the norm is degenerate.
std::vector<double> normalized_or_empty(const double* v, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += v[i] * v[i];
    if (s < 1e-24) return {};
    std::vector<double> out(n);
    const double inv = 1.0 / std::sqrt(s);
    for (int i = 0; i < n; ++i) out[i] = v[i] * inv;
    return out;
}

struct SampleMeans {
    TensorPtr mean;  // null when no sample contributed
    int contributors = 0;
};

SampleMeans mean_of(const std::vector<TensorPtr>& scalars) {
    SampleMeans out;
    out.contributors = static_cast<int>(scalars.size());
    if (scalars.empty()) return out;
    out.mean = mean_pool_axis(concat_axis(scalars, 0), 0);  // stack to K x 1, then 1 x 1
    return out;
}

}  // namespace

FinetuneResult finetune(const TrainConfig& cfg, const ParamMap* checkpoint,
                        const Dataset& train_set, const Dataset& test_set,
                        const StepHook& hook) {
    cfg.validate();
    if (train_set.examples.empty()) throw ContractError("finetune: empty train set");
    if (cfg.method != Method::kScratch && checkpoint == nullptr) {
        throw ContractError("finetune: method " + method_name(cfg.method) +
                            " requires a checkpoint");
    }

    const bool use_con = cfg.use_contrastive();
    const double alpha = cfg.effective_alpha();
    const double beta = cfg.effective_beta();
    const bool use_r = alpha > 0.0;
    const bool use_s = beta > 0.0;
    const int num_classes = train_set.num_classes;

    auto init_rng = make_rng(cfg.seed, RngStream::kParamInit, 1);
    Model model(net_config(cfg, num_classes));
    model.init(init_rng);
    if (cfg.method != Method::kScratch) {
        apply_params(model.named_params(), *checkpoint, "encoder.");
    }

    std::vector<TensorPtr> trainable;
    for (auto& [name, t] : model.encoder.named_params("")) {
        (void)name;
        trainable.push_back(t);
    }
    for (auto& [name, t] : model.classifier.named_params("")) {
        (void)name;
        trainable.push_back(t);
    }
    if (use_s) {
        for (auto& [name, t] : model.head.named_params("")) {
            (void)name;
            trainable.push_back(t);
        }
    }

    // Momentum twin and queues exist for every method that uses keys.
    std::optional<ModelPair> pair;
    std::optional<QueueGroup> image_queues;
    std::optional<QueueGroup> patch_queues;
    if (use_con) {
        pair.emplace(std::move(model), cfg.ema_momentum);
        auto queue_rng = make_rng(cfg.seed, RngStream::kQueueInit);
        image_queues.emplace(KeyKind::kImage, num_classes, cfg.queue_capacity, 1, num_classes);
        if (cfg.queue_warm_start_random) image_queues->fill_random(queue_rng);
        if (use_r) {
            patch_queues.emplace(KeyKind::kPatch, num_classes, cfg.queue_capacity, cfg.rare_count,
                                 cfg.channels);
            if (cfg.queue_warm_start_random) patch_queues->fill_random(queue_rng);
        }
    }
    Model& query = pair ? pair->query : model;

    auto batch_rng = make_rng(cfg.seed, RngStream::kBatchOrder, 1);
    auto img_sample_rng = make_rng(cfg.seed, RngStream::kQueueSampleImage);
    auto patch_sample_rng = make_rng(cfg.seed, RngStream::kQueueSamplePatch);
    auto noise_rng = make_rng(cfg.seed, RngStream::kHeadNoise);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const auto start_time = std::chrono::steady_clock::now();
    MetricsRecord metrics;
    metrics.method = method_name(cfg.method);
    metrics.seed = cfg.seed;

    const int n = static_cast<int>(train_set.examples.size());
    const int nn = query.cfg.geom.num_cells();
    const int iters = resolve_iters(cfg, n);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);

    Tape tape;
    long step_counter = 0;
    for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), batch_rng);
        LossBreakdown epoch_sum;
        for (int it = 0; it < iters; ++it) {
            const auto batch = epoch_batch(perm, it, cfg.batch_size);
            const int b = static_cast<int>(batch.size());
            std::vector<int> labels(b);
            for (int j = 0; j < b; ++j) labels[j] = train_set.examples[batch[j]].label;

            TapeScope scope(tape);
            const auto fwd = forward_batch(query.encoder, query.classifier, train_set, batch);
            auto probs = softmax_rows(transpose(fwd.logits));
            auto l_ce = batch_cross_entropy(probs, labels);

            std::vector<TensorPtr> con_terms, r_terms, s_ce_terms, s_kl_terms;
            auto logits_rows = use_con ? transpose(fwd.logits) : nullptr;  // B x K

            for (int i = 0; i < b; ++i) {
                const Example& ex = train_set.examples[batch[i]];

                if (use_con) {
                    try {
                        const auto keys = sample_positive_negative(*image_queues, ex.label,
                                                                   cfg.k_plus, cfg.k_minus,
                                                                   img_sample_rng);
                        auto q_i = l2_normalize_rows(gather_rows(logits_rows, {i}));
                        std::vector<TensorPtr> pos, neg;
                        pos.reserve(keys.positives.size());
                        neg.reserve(keys.negatives.size());
                        for (const auto& k : keys.positives) pos.push_back(key_to_tensor(k));
                        for (const auto& k : keys.negatives) neg.push_back(key_to_tensor(k));
                        con_terms.push_back(supcon_loss(q_i, pos, neg, cfg.tau,
                                                        cfg.supcon_positives_in_denominator));
                    } catch (const NotWarmError&) {
                        // Cold queue: this sample contributes no L_con.
                    } catch (const DomainError&) {
                        // Degenerate query direction (dead features); skip.
                    }
                }

                if (use_r) {
                    // Selection reads values only; no gradient flows through it.
                    auto fmap_vals = make_tensor(
                        {cfg.channels, nn},
                        [&] {
                            std::vector<double> v(static_cast<std::size_t>(cfg.channels) * nn);
                            const int total = fwd.fmap->shape[1];
                            for (int ch = 0; ch < cfg.channels; ++ch) {
                                for (int t = 0; t < nn; ++t) {
                                    v[static_cast<std::size_t>(ch) * nn + t] =
                                        fwd.fmap->data[static_cast<std::size_t>(ch) * total +
                                                       i * nn + t];
                                }
                            }
                            return v;
                        }());
                    std::vector<double> logit_col(num_classes);
                    for (int c = 0; c < num_classes; ++c) {
                        logit_col[c] = fwd.logits->data[static_cast<std::size_t>(c) * b + i];
                    }
                    const auto positions = select_rare_patches(
                        fmap_vals, make_tensor({num_classes, 1}, logit_col), ex.label,
                        query.classifier, cfg.rare_count);
                    try {
                        const auto keys = sample_positive_negative(*patch_queues, ex.label,
                                                                   cfg.k_plus, cfg.k_minus,
                                                                   patch_sample_rng);
                        auto query_block = embed_patches(query.encoder, ex.pixels, positions);
                        std::vector<TensorPtr> pos, neg;
                        pos.reserve(keys.positives.size());
                        neg.reserve(keys.negatives.size());
                        for (const auto& k : keys.positives) pos.push_back(key_to_tensor(k));
                        for (const auto& k : keys.negatives) neg.push_back(key_to_tensor(k));
                        r_terms.push_back(rare_loss(query_block, pos, neg, cfg.tau,
                                                    cfg.supcon_positives_in_denominator));
                    } catch (const NotWarmError&) {
                    } catch (const DomainError&) {
                        // A selected cell embedded to a zero row; skip L_r here.
                    }
                }

                if (use_s) {
                    auto fmap_i = slice_cols(fwd.fmap, i * nn, nn);
                    TensorPtr noise;
                    if (cfg.sample_zhat_in_train) {
                        std::vector<double> nv(cfg.d_z);
                        for (auto& v : nv) v = gauss(noise_rng);
                        noise = make_tensor({cfg.d_z, 1}, std::move(nv));
                    }
                    const auto head_out =
                        front_door_forward(query.head, fmap_i, RunMode::kTrain, noise);
                    s_ce_terms.push_back(frontdoor_ce(head_out.probabilities, ex.label));
                    s_kl_terms.push_back(kl_to_standard_normal(head_out.mu, head_out.sigma));
                }
            }

            const auto con = mean_of(con_terms);
            const auto rare = mean_of(r_terms);
            const auto s_ce = mean_of(s_ce_terms);
            const auto s_kl = mean_of(s_kl_terms);

            TensorPtr total = l_ce;
            if (con.mean) total = add(total, con.mean);
            if (rare.mean) total = add(total, scalar_mul(rare.mean, alpha));
            if (s_ce.mean) total = add(total, scalar_mul(add(s_ce.mean, s_kl.mean), beta));

            LossParts parts;
            parts.ce = l_ce->scalar();
            if (con.mean) parts.con = con.mean->scalar();
            if (rare.mean) parts.r = rare.mean->scalar();
            if (s_ce.mean) {
                parts.s_ce = s_ce.mean->scalar();
                parts.s_kl = s_kl.mean->scalar();
            }
            const LossBreakdown breakdown = total_loss(parts, alpha, beta);
            if (!std::isfinite(total->scalar())) {
                throw RunError("finetune(" + metrics.method + "): loss not finite at epoch " +
                               std::to_string(epoch) + " iter " + std::to_string(it));
            }

            tape.backward(total);
            sgd_step(trainable, cfg.lr, cfg.sgd_momentum);
            tape.clear();
            if (pair) ema_update(*pair);

            // New keys come from the key model, after its EMA update.
            if (use_con) {
                NoTapeScope no_tape;
                const auto key_fwd =
                    forward_batch(pair->key.encoder, pair->key.classifier, train_set, batch);
                for (int i = 0; i < b; ++i) {
                    const Example& ex = train_set.examples[batch[i]];
                    std::vector<double> col(num_classes);
                    for (int c = 0; c < num_classes; ++c) {
                        col[c] = key_fwd.logits->data[static_cast<std::size_t>(c) * b + i];
                    }
                    auto normalized = normalized_or_empty(col.data(), num_classes);
                    if (!normalized.empty()) {
                        KeyMatrix key;
                        key.rows = 1;
                        key.cols = num_classes;
                        key.values = std::move(normalized);
                        image_queues->for_class(ex.label).enqueue(std::move(key), step_counter);
                    }
                    if (use_r) {
                        std::vector<double> fv(static_cast<std::size_t>(cfg.channels) * nn);
                        const int total_cols = key_fwd.fmap->shape[1];
                        for (int ch = 0; ch < cfg.channels; ++ch) {
                            for (int t = 0; t < nn; ++t) {
                                fv[static_cast<std::size_t>(ch) * nn + t] =
                                    key_fwd.fmap->data[static_cast<std::size_t>(ch) * total_cols +
                                                       i * nn + t];
                            }
                        }
                        const auto positions = select_rare_patches(
                            make_tensor({cfg.channels, nn}, std::move(fv)),
                            make_tensor({num_classes, 1}, col), ex.label, pair->key.classifier,
                            cfg.rare_count);
                        try {
                            auto block = embed_patches(pair->key.encoder, ex.pixels, positions);
                            KeyMatrix key;
                            key.rows = cfg.rare_count;
                            key.cols = cfg.channels;
                            key.values = block->data;
                            patch_queues->for_class(ex.label).enqueue(std::move(key),
                                                                      step_counter);
                        } catch (const DomainError&) {
                        }
                    }
                }
            }
            ++step_counter;
            if (hook) {
                hook(static_cast<int>(step_counter), breakdown, query,
                     pair ? &pair->key : nullptr);
            }

            epoch_sum.l_ce += breakdown.l_ce;
            epoch_sum.l_con += breakdown.l_con;
            epoch_sum.l_r += breakdown.l_r;
            epoch_sum.l_s_ce += breakdown.l_s_ce;
            epoch_sum.l_s_kl += breakdown.l_s_kl;
            epoch_sum.total += breakdown.total;
            epoch_sum.has_ce = true;
            epoch_sum.has_con = epoch_sum.has_con || breakdown.has_con;
            epoch_sum.has_r = epoch_sum.has_r || breakdown.has_r;
            epoch_sum.has_s = epoch_sum.has_s || breakdown.has_s;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.mean_losses = epoch_sum;
        em.mean_losses.l_ce /= iters;
        em.mean_losses.l_con /= iters;
        em.mean_losses.l_r /= iters;
        em.mean_losses.l_s_ce /= iters;
        em.mean_losses.l_s_kl /= iters;
        em.mean_losses.total /= iters;
        em.train_accuracy = evaluate(query, train_set, cfg.eval_via_front_door);
        em.test_accuracy = evaluate(query, test_set, cfg.eval_via_front_door);
        metrics.epochs.push_back(em);
    }

    metrics.final_test_accuracy =
        metrics.epochs.empty() ? evaluate(query, test_set, cfg.eval_via_front_door)
                               : metrics.epochs.back().test_accuracy;
    metrics.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();

    FinetuneResult result{pair ? std::move(pair->query) : std::move(model), std::move(metrics)};
    return result;
}

// ---------------------------------------------------------------------------
// Matrix orchestration and metrics output.

std::string metrics_to_csv(const std::vector<MetricsRecord>& records) {
    std::string out = "method,seed,epoch,split,metric,value\n";
    auto row = [&out](const std::string& method, std::uint64_t seed, int epoch,
                      const char* split, const char* metric, double value) {
        out += method;
        out += ',';
        out += std::to_string(seed);
        out += ',';
        out += std::to_string(epoch);
        out += ',';
        out += split;
        out += ',';
        out += metric;
        out += ',';
        out += format_double(value);
        out += '\n';
    };
    for (const auto& rec : records) {
        for (const auto& em : rec.epochs) {
            row(rec.method, rec.seed, em.epoch, "train", "accuracy", em.train_accuracy);
            row(rec.method, rec.seed, em.epoch, "test", "accuracy", em.test_accuracy);
            row(rec.method, rec.seed, em.epoch, "train", "l_ce", em.mean_losses.l_ce);
            row(rec.method, rec.seed, em.epoch, "train", "l_con", em.mean_losses.l_con);
            row(rec.method, rec.seed, em.epoch, "train", "l_r", em.mean_losses.l_r);
            row(rec.method, rec.seed, em.epoch, "train", "l_s_ce", em.mean_losses.l_s_ce);
            row(rec.method, rec.seed, em.epoch, "train", "l_s_kl", em.mean_losses.l_s_kl);
            row(rec.method, rec.seed, em.epoch, "train", "loss_total", em.mean_losses.total);
        }
        const int last = rec.epochs.empty() ? 0 : rec.epochs.back().epoch;
        row(rec.method, rec.seed, last, "test", "final_accuracy", rec.final_test_accuracy);
    }
    return out;
}

MatrixResult run_matrix(const std::vector<Method>& methods,
                        const std::vector<std::uint64_t>& seeds, const TrainConfig& base_cfg,
                        const PlantedData& data, const std::string& out_dir) {
    if (methods.empty() || seeds.empty()) {
        throw ContractError("run_matrix: methods and seeds must be non-empty");
    }
    std::filesystem::create_directories(out_dir);

    TrainConfig cfg = base_cfg;
    cfg.grid = data.config.grid;
    cfg.cell = data.config.cell;

    MatrixResult result;
    for (std::uint64_t seed : seeds) {
        cfg.seed = seed;
        const auto pre = pretrain(cfg, data.pretrain);
        const std::string ckpt_path =
            out_dir + "/checkpoint_seed" + std::to_string(seed) + ".json";
        save_checkpoint(ckpt_path, pre.model);
        const ParamMap checkpoint = load_params(ckpt_path);

        for (Method m : methods) {
            TrainConfig cell_cfg = cfg;
            cell_cfg.method = m;
            try {
                auto ft = finetune(cell_cfg, m == Method::kScratch ? nullptr : &checkpoint,
                                   data.train, data.test);
                result.records.push_back(ft.metrics);

                nlohmann::json summary;
                summary["method"] = method_name(m);
                summary["seed"] = seed;
                summary["final_test_accuracy"] = ft.metrics.final_test_accuracy;
                summary["wall_clock_seconds"] = ft.metrics.wall_clock_seconds;
                summary["config"] = nlohmann::json::parse(train_config_to_json(cell_cfg));
                write_file_atomic(out_dir + "/summary_" + method_name(m) + "_seed" +
                                      std::to_string(seed) + ".json",
                                  summary.dump(2));
            } catch (const std::exception& e) {
                throw RunError("run_matrix cell (method=" + method_name(m) +
                               ", seed=" + std::to_string(seed) + "): " + e.what());
            }
        }
    }

    result.csv_path = out_dir + "/metrics.csv";
    write_file_atomic(result.csv_path, metrics_to_csv(result.records));
    return result;
}

Dataset mask_non_rare_cells(const Dataset& dataset, const GridGeometry& geom) {
    Dataset out = dataset;
    const int side = geom.side();
    for (auto& ex : out.examples) {
        if (ex.rare_cell < 0) continue;
        const int gy = ex.rare_cell / geom.grid;
        const int gx = ex.rare_cell % geom.grid;
        std::vector<double> masked(ex.pixels.size(), 0.0);
        for (int i = 0; i < geom.cell; ++i) {
            for (int j = 0; j < geom.cell; ++j) {
                const std::size_t at =
                    static_cast<std::size_t>(gy * geom.cell + i) * side + gx * geom.cell + j;
                masked[at] = ex.pixels[at];
            }
        }
        ex.pixels = std::move(masked);
    }
    return out;
}

}  // namespace ct
