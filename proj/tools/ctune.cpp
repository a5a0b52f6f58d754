// Command-line front end: dataset generation, training runs, the full
// method/seed matrix, dataset audits, and the invariant self-test suites.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ct/bench.hpp"
#include "ct/harness.hpp"
#include "ct/io.hpp"
#include "ct/selftest.hpp"

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha, beta, tau, lr;
    std::optional<int> pretrain_epochs, finetune_epochs, batch_size, queue_capacity, rare_count,
        k_plus, k_minus;
    bool supcon_pos_denom = false;
    bool raw_channel_gram = false;
    bool no_zhat_sample = false;
    bool phi1_aggregate = false;
    bool eval_front_door = false;
    bool skip_until_warm = false;
};

struct Configs {
    ct::TrainConfig train;
    ct::PlantedConfig bench;
};

Configs load_configs(const std::string& config_path, const Overrides& ov) {
    Configs out;
    if (!config_path.empty()) {
        const auto doc = nlohmann::json::parse(ct::read_file(config_path));
        if (doc.contains("train")) {
            out.train = ct::train_config_from_json(doc.at("train").dump());
        }
        if (doc.contains("bench")) {
            out.bench = ct::planted_config_from_json(doc.at("bench").dump());
        }
    }
    if (ov.seed) {
        out.train.seed = *ov.seed;
        out.bench.seed = *ov.seed;
    }
    if (ov.alpha) out.train.alpha = *ov.alpha;
    if (ov.beta) out.train.beta = *ov.beta;
    if (ov.tau) out.train.tau = *ov.tau;
    if (ov.lr) out.train.lr = *ov.lr;
    if (ov.pretrain_epochs) out.train.pretrain_epochs = *ov.pretrain_epochs;
    if (ov.finetune_epochs) out.train.finetune_epochs = *ov.finetune_epochs;
    if (ov.batch_size) out.train.batch_size = *ov.batch_size;
    if (ov.queue_capacity) out.train.queue_capacity = *ov.queue_capacity;
    if (ov.rare_count) out.train.rare_count = *ov.rare_count;
    if (ov.k_plus) out.train.k_plus = *ov.k_plus;
    if (ov.k_minus) out.train.k_minus = *ov.k_minus;
    if (ov.supcon_pos_denom) out.train.supcon_positives_in_denominator = true;
    if (ov.raw_channel_gram) out.train.channel_attention_softmax = false;
    if (ov.no_zhat_sample) out.train.sample_zhat_in_train = false;
    if (ov.phi1_aggregate) out.train.phi1_consumes_aggregate = true;
    if (ov.eval_front_door) out.train.eval_via_front_door = true;
    if (ov.skip_until_warm) out.train.queue_warm_start_random = false;
    return out;
}

void add_override_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--seed", ov.seed, "Seed override for both data and training");
    cmd->add_option("--alpha", ov.alpha, "Weight of the rare-feature loss");
    cmd->add_option("--beta", ov.beta, "Weight of the deconfounded prediction loss");
    cmd->add_option("--tau", ov.tau, "Contrastive temperature");
    cmd->add_option("--lr", ov.lr, "Learning rate");
    cmd->add_option("--pretrain-epochs", ov.pretrain_epochs, "Pretraining epochs");
    cmd->add_option("--finetune-epochs", ov.finetune_epochs, "Fine-tuning epochs");
    cmd->add_option("--batch-size", ov.batch_size, "Batch size");
    cmd->add_option("--queue-capacity", ov.queue_capacity, "Per-class queue capacity");
    cmd->add_option("--rare-count", ov.rare_count, "Rare patches per example (R)");
    cmd->add_option("--k-plus", ov.k_plus, "Positive keys per query");
    cmd->add_option("--k-minus", ov.k_minus, "Negative keys per query");
    cmd->add_flag("--supcon-positives-in-denominator", ov.supcon_pos_denom,
                  "Use the SupCon denominator convention");
    cmd->add_flag("--raw-channel-gram", ov.raw_channel_gram,
                  "Skip softmax normalization of the channel attention");
    cmd->add_flag("--no-zhat-sample", ov.no_zhat_sample,
                  "Use the mean of zhat during training instead of sampling");
    cmd->add_flag("--phi1-aggregate", ov.phi1_aggregate,
                  "Feed [zhat; deconfounded] to the phi1 classifier");
    cmd->add_flag("--eval-front-door", ov.eval_front_door,
                  "Evaluate through the front-door head instead of the classifier");
    cmd->add_flag("--skip-until-warm", ov.skip_until_warm,
                  "Start with empty queues and skip contrastive terms until warm");
}

ct::PlantedData obtain_data(const std::string& data_path, const ct::PlantedConfig& bench) {
    if (!data_path.empty()) return ct::load_planted(data_path);
    return ct::generate_planted(bench);
}

std::vector<ct::Method> parse_methods(const std::string& list) {
    std::vector<ct::Method> out;
    std::stringstream ss(list);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) out.push_back(ct::method_from_string(token));
    }
    if (out.empty()) throw ct::ConfigError("no methods given");
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(list);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) out.push_back(std::stoull(token));
    }
    if (out.empty()) throw ct::ConfigError("no seeds given");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept-level fine-tuning engine on the planted benchmark"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_dir = "out", checkpoint_path, method = "full";
    std::string methods_list = "vanilla_ft,lf_only,lf_lr,lf_ls,full";
    std::string seeds_list = "0,1,2,3,4";
    Overrides ov;

    auto* gen = app.add_subcommand("gen", "Generate the planted datasets");
    gen->add_option("--config", config_path, "JSON config file");
    gen->add_option("--out", out_dir, "Output directory");
    gen->add_option("--seed", ov.seed, "Seed override");

    auto* audit_cmd = app.add_subcommand("audit", "Audit a planted dataset file");
    audit_cmd->add_option("--data", data_path, "Planted dataset file")->required();

    auto* pre = app.add_subcommand("pretrain", "Pretrain encoder + classifier");
    pre->add_option("--config", config_path, "JSON config file");
    pre->add_option("--data", data_path, "Planted dataset file (generated when absent)");
    pre->add_option("--out", out_dir, "Output directory");
    add_override_flags(pre, ov);

    auto* fine = app.add_subcommand("finetune", "Fine-tune one method variant");
    fine->add_option("--config", config_path, "JSON config file");
    fine->add_option("--data", data_path, "Planted dataset file (generated when absent)");
    fine->add_option("--checkpoint", checkpoint_path, "Pretrained checkpoint");
    fine->add_option("--method", method, "scratch|vanilla_ft|lf_only|lf_lr|lf_ls|full");
    fine->add_option("--out", out_dir, "Output directory");
    add_override_flags(fine, ov);

    auto* matrix = app.add_subcommand("matrix", "Run the full method x seed matrix");
    matrix->add_option("--config", config_path, "JSON config file");
    matrix->add_option("--data", data_path, "Planted dataset file (generated when absent)");
    matrix->add_option("--methods", methods_list, "Comma-separated method list");
    matrix->add_option("--seeds", seeds_list, "Comma-separated seed list");
    matrix->add_option("--out", out_dir, "Output directory");
    add_override_flags(matrix, ov);

    auto* self = app.add_subcommand("selftest", "Run the invariant and oracle suites");
    std::uint64_t selftest_seed = 0;
    self->add_option("--seed", selftest_seed, "Seed for randomized suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const Configs cfg = load_configs(config_path, ov);
            const auto data = ct::generate_planted(cfg.bench);
            std::filesystem::create_directories(out_dir);
            const std::string path = out_dir + "/planted.ctds";
            ct::save_planted(path, data);
            ct::write_file_atomic(out_dir + "/bench_config.json",
                                  ct::planted_config_to_json(cfg.bench));
            std::cout << "wrote " << path << " (" << data.pretrain.examples.size()
                      << " pretrain, " << data.train.examples.size() << " train, "
                      << data.test.examples.size() << " test)\n";
        } else if (audit_cmd->parsed()) {
            const auto data = ct::load_planted(data_path);
            const auto report = ct::audit(data);
            std::cout << report.to_string();
            return report.all_ok ? 0 : 1;
        } else if (pre->parsed()) {
            const Configs cfg = load_configs(config_path, ov);
            auto data = obtain_data(data_path, cfg.bench);
            ct::TrainConfig tc = cfg.train;
            tc.grid = data.config.grid;
            tc.cell = data.config.cell;
            const auto result = ct::pretrain(tc, data.pretrain);
            std::filesystem::create_directories(out_dir);
            const std::string path = out_dir + "/checkpoint.json";
            ct::save_checkpoint(path, result.model);
            for (std::size_t e = 0; e < result.epoch_accuracy.size(); ++e) {
                std::printf("epoch %zu pretrain accuracy %.4f\n", e, result.epoch_accuracy[e]);
            }
            std::cout << "wrote " << path << "\n";
        } else if (fine->parsed()) {
            const Configs cfg = load_configs(config_path, ov);
            auto data = obtain_data(data_path, cfg.bench);
            ct::TrainConfig tc = cfg.train;
            tc.grid = data.config.grid;
            tc.cell = data.config.cell;
            tc.method = ct::method_from_string(method);

            std::optional<ct::ParamMap> checkpoint;
            if (tc.method != ct::Method::kScratch) {
                if (checkpoint_path.empty()) {
                    const auto pre_result = ct::pretrain(tc, data.pretrain);
                    std::filesystem::create_directories(out_dir);
                    checkpoint_path = out_dir + "/checkpoint.json";
                    ct::save_checkpoint(checkpoint_path, pre_result.model);
                }
                checkpoint = ct::load_params(checkpoint_path);
            }
            const auto result = ct::finetune(tc, checkpoint ? &*checkpoint : nullptr, data.train,
                                             data.test);
            std::filesystem::create_directories(out_dir);
            ct::write_file_atomic(out_dir + "/metrics.csv",
                                  ct::metrics_to_csv({result.metrics}));
            std::printf("%s seed %llu final test accuracy %.4f\n", method.c_str(),
                        static_cast<unsigned long long>(tc.seed),
                        result.metrics.final_test_accuracy);
        } else if (matrix->parsed()) {
            const Configs cfg = load_configs(config_path, ov);
            auto data = obtain_data(data_path, cfg.bench);
            const auto result = ct::run_matrix(parse_methods(methods_list),
                                               parse_seeds(seeds_list), cfg.train, data, out_dir);
            std::cout << "wrote " << result.csv_path << " with " << result.records.size()
                      << " records\n";
        } else if (self->parsed()) {
            const auto results = ct::selftest::run_all(selftest_seed);
            bool all = true;
            for (const auto& r : results) {
                std::printf("%-24s %s%s%s\n", r.name.c_str(), r.passed ? "pass" : "FAIL",
                            r.detail.empty() ? "" : ": ", r.detail.c_str());
                all = all && r.passed;
            }
            return all ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
