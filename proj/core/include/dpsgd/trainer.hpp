#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpsgd/accountant.hpp"
#include "dpsgd/config.hpp"

namespace dpsgd {

// Experiment harness: the DP-SGD training loop with scheduling and
// accounting, per-step metrics persistence, and the three paired
// experiment runners.

struct MetricsRow {
    std::uint64_t epoch = 0;  // 1-based
    std::uint64_t step = 0;   // 1-based, global
    double lr = 0.0;
    double momentum = 0.0;
    bool has_train_loss = false;  // false when the Poisson lot was empty
    double train_loss = 0.0;
    bool has_eval = false;
    double val_accuracy = 0.0;
    double val_loss = 0.0;
    bool has_privacy = false;
    double epsilon = 0.0;
    double best_order = 0.0;
};

struct RunMetrics {
    std::vector<MetricsRow> rows;
    std::vector<std::pair<std::string, std::string>> summary;
    bool is_private = false;
    double final_accuracy = 0.0;
    double final_epsilon = 0.0;  // 0 for non-private runs
    std::uint64_t total_steps = 0;

    std::string csv() const;  // fixed column order; epsilon columns only when private
    std::string summary_text() const;
};

// 1 - private_acc / baseline_acc
double accuracy_loss(double private_acc, double baseline_acc);

// Executes the configured run; when config.out_dir is set, writes
// metrics.csv incrementally plus summary.txt and config.txt.
RunMetrics train_run(const RunConfig& config);

struct ExperimentOptions {
    std::string data_dir;
    std::size_t subset = 0;  // 0 = full dataset
    std::string out_dir = "out";
    std::uint64_t seed = 42;
    int workers = 0;
    std::uint64_t one_cycle_epochs = 0;  // 0 = reference default
    std::uint64_t plateau_epochs = 0;
    std::uint64_t baseline_epochs = 0;
};

// Reference configurations for the paired comparisons. The hyperparameter
// values are this project's desk-scale defaults, recorded as such in the
// run metadata.
RunConfig reference_one_cycle_dp(const ExperimentOptions& opts);
RunConfig reference_plateau_dp(const ExperimentOptions& opts);
RunConfig reference_baseline(const ExperimentOptions& opts);

struct ExperimentResult {
    std::vector<std::string> run_dirs;
    std::string figure_csv_path;
    std::vector<RunMetrics> runs;  // order: one_cycle_dp, plateau_dp[, baseline]
};

// 1: validation accuracy vs epochs; 2: accuracy loss vs epsilon (adds the
// non-private baseline); 3: epsilon vs epochs.
ExperimentResult run_experiment(int exp_id, const ExperimentOptions& opts);

// Joins run summaries under runs_dir into one CSV table
// (run, mode, final_accuracy, final_epsilon, accuracy_loss).
std::string report_runs(const std::string& runs_dir);

}  // namespace dpsgd
