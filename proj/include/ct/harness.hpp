#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ct/bench.hpp"
#include "ct/losses.hpp"
#include "ct/nets.hpp"
#include "ct/queues.hpp"

namespace ct {

enum class Method { kScratch, kVanillaFt, kLfOnly, kLfLr, kLfLs, kFull };

std::string method_name(Method m);
Method method_from_string(const std::string& name);
const std::vector<Method>& all_methods();

struct TrainConfig {
    // Objective weights and temperatures.
    double alpha = 0.05;  // paper value 1.0; desk scale needs a gentler pull
    double beta = 5e-3;
    double tau = 0.07;
    double ema_momentum = 0.9;  // paper value 0.999 suits runs of >> 250 steps
    int queue_capacity = 40;
    int rare_count = 4;  // R
    int k_plus = 40;
    int k_minus = 40;

    // Dimensions. grid/cell describe the input geometry and must match the
    // dataset being trained on.
    int grid = 6;
    int cell = 5;
    int channels = 32;
    int d_patch = 16;
    int d_z = 32;

    // Schedule.
    int pretrain_epochs = 15;
    int finetune_epochs = 10;
    int iters_per_epoch = 0;  // 0: ceil(|dataset| / batch_size)
    int batch_size = 32;
    double lr = 0.02;
    double sgd_momentum = 0.9;

    Method method = Method::kFull;
    std::uint64_t seed = 0;

    // Resolved design-decision switches.
    bool supcon_positives_in_denominator = false;
    bool channel_attention_softmax = true;
    bool sample_zhat_in_train = true;
    bool phi1_consumes_aggregate = false;
    bool eval_via_front_door = false;
    bool queue_warm_start_random = true;
    bool classifier_bias = false;

    void validate() const;

    // Term activation implied by the method. A zero-weight term is skipped
    // entirely, which is what makes lf_only and full(alpha=beta=0)
    // bit-identical.
    bool use_contrastive() const;
    double effective_alpha() const;
    double effective_beta() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct EpochMetrics {
    int epoch = 0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    LossBreakdown mean_losses;
};

struct MetricsRecord {
    std::string method;
    std::uint64_t seed = 0;
    std::vector<EpochMetrics> epochs;
    double final_test_accuracy = 0.0;
    double wall_clock_seconds = 0.0;
};

struct PretrainResult {
    Model model;  // encoder + pretrain classifier (front-door head left at init)
    std::vector<double> epoch_accuracy;  // [0] is the pre-training-start accuracy
};

// Cross-entropy training of encoder + classifier on the pretrain split.
PretrainResult pretrain(const TrainConfig& cfg, const Dataset& pretrain_set);

// Checkpoint = the pretrain model's encoder and classifier parameters.
void save_checkpoint(const std::string& path, const Model& model);

// Invoked after each optimizer step (post EMA update); key is null for
// methods without a momentum model.
using StepHook = std::function<void(int step, const LossBreakdown& step_losses,
                                    const Model& query, const Model* key)>;

struct FinetuneResult {
    Model model;
    MetricsRecord metrics;
};

// Fine-tunes on the downstream train split under the configured method
// variant; `checkpoint` supplies encoder weights for every method except
// scratch.
FinetuneResult finetune(const TrainConfig& cfg, const ParamMap* checkpoint,
                        const Dataset& train_set, const Dataset& test_set,
                        const StepHook& hook = {});

// Top-1 accuracy of the plain classifier path (or the front-door head when
// the config switch selects it).
double evaluate(const Model& model, const Dataset& dataset, bool via_front_door = false);

struct MatrixResult {
    std::vector<MetricsRecord> records;
    std::string csv_path;
};

// Pretrains once per seed, fine-tunes every method from that checkpoint, and
// writes metrics.csv plus one JSON summary per cell into out_dir.
MatrixResult run_matrix(const std::vector<Method>& methods,
                        const std::vector<std::uint64_t>& seeds, const TrainConfig& base_cfg,
                        const PlantedData& data, const std::string& out_dir);

std::string metrics_to_csv(const std::vector<MetricsRecord>& records);

// Diagnostic for the rare-feature probe: keeps only the planted rare cell of
// each image, zeroing every other cell.
Dataset mask_non_rare_cells(const Dataset& dataset, const GridGeometry& geom);

}  // namespace ct
