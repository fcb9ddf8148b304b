// Command-line front end: train, account, experiment, data verify, report.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dpsgd/accountant.hpp"
#include "dpsgd/config.hpp"
#include "dpsgd/errors.hpp"
#include "dpsgd/mnist.hpp"
#include "dpsgd/trainer.hpp"

namespace {

int run_train(const std::string& config_path, std::uint64_t seed, bool seed_set,
              const std::string& out_dir) {
    dpsgd::RunConfig cfg = dpsgd::RunConfig::from_file(config_path);
    if (seed_set) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    const dpsgd::RunMetrics metrics = dpsgd::train_run(cfg);
    std::cout << metrics.summary_text();
    return 0;
}

int run_account(double sigma, double q, double delta, std::uint64_t steps, bool per_step) {
    dpsgd::RdpLedger ledger;
    if (per_step) {
        std::cout << "step,epsilon,best_order\n";
        for (std::uint64_t s = 1; s <= steps; ++s) {
            ledger.account_step(q, sigma);
            const dpsgd::PrivacyReport rep = ledger.to_dp(delta);
            std::cout << s << ',' << rep.epsilon << ',' << rep.best_order << '\n';
        }
    } else {
        ledger.account_steps(q, sigma, steps);
    }
    const dpsgd::PrivacyReport rep = ledger.to_dp(delta);
    std::cout << "epsilon = " << rep.epsilon << "\nbest_order = " << rep.best_order
              << "\nsteps = " << rep.steps << "\ndelta = " << rep.delta << '\n';
    return 0;
}

int run_verify(const std::string& digests) {
    const auto checks = dpsgd::verify_digests(digests);
    bool all_ok = true;
    for (const auto& c : checks) {
        std::cout << (c.ok ? "OK      " : "MISMATCH") << ' ' << c.file << '\n';
        if (!c.ok) {
            std::cout << "  expected " << c.expected << "\n  actual   " << c.actual << '\n';
            all_ok = false;
        }
    }
    if (!all_ok) throw dpsgd::DataError("digest verification failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentially private CNN training with RDP accounting"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Run one training configuration");
    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    train->add_option("--config", config_path, "key=value config file")->required();
    auto* seed_opt = train->add_option("--seed", seed, "override run.seed");
    train->add_option("--out", out_dir, "output directory");

    // account
    auto* account = app.add_subcommand("account", "Standalone privacy accounting");
    double sigma = 1.1, q = 0.01, delta = 1e-5;
    std::uint64_t steps = 1;
    bool per_step = false;
    account->add_option("--sigma", sigma, "noise multiplier")->required();
    account->add_option("--q", q, "Poisson sampling rate")->required();
    account->add_option("--delta", delta, "target delta")->required();
    account->add_option("--steps", steps, "number of mechanism invocations")->required();
    account->add_flag("--per-step", per_step, "emit a per-step CSV ledger trace");

    // experiment
    auto* experiment = app.add_subcommand("experiment", "Run a paired comparison experiment");
    int exp_id = 1;
    dpsgd::ExperimentOptions opts;
    experiment->add_option("--id", exp_id, "experiment id (1, 2 or 3)")->required();
    experiment->add_option("--data", opts.data_dir, "directory with the MNIST IDX files")
        ->required();
    experiment->add_option("--subset", opts.subset, "stratified training subset size (0 = full)");
    experiment->add_option("--out", opts.out_dir, "output directory");
    experiment->add_option("--seed", opts.seed, "run seed");
    experiment->add_option("--workers", opts.workers, "worker threads (0 = auto)");
    experiment->add_option("--one-cycle-epochs", opts.one_cycle_epochs, "override epochs");
    experiment->add_option("--plateau-epochs", opts.plateau_epochs, "override epochs");
    experiment->add_option("--baseline-epochs", opts.baseline_epochs, "override epochs");

    // data verify
    auto* data = app.add_subcommand("data", "Dataset utilities");
    data->require_subcommand(1);
    auto* verify = data->add_subcommand("verify", "Check SHA-256 digests of data files");
    std::string digests;
    verify->add_option("--digests", digests, "digest list file (filename, hex digest per line)")
        ->required();

    // report
    auto* report = app.add_subcommand("report", "Join run summaries into one table");
    std::string runs_dir;
    report->add_option("--runs", runs_dir, "directory containing run outputs")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return run_train(config_path, seed, seed_opt->count() > 0, out_dir);
        if (*account) return run_account(sigma, q, delta, steps, per_step);
        if (*experiment) {
            const dpsgd::ExperimentResult r = dpsgd::run_experiment(exp_id, opts);
            std::cout << "figure: " << r.figure_csv_path << '\n';
            for (const std::string& d : r.run_dirs) std::cout << "run: " << d << '\n';
            return 0;
        }
        if (*verify) return run_verify(digests);
        if (*report) {
            std::cout << dpsgd::report_runs(runs_dir);
            return 0;
        }
    } catch (const dpsgd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const dpsgd::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const dpsgd::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
