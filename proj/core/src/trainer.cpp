#include "dpsgd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dpsgd/dp.hpp"
#include "dpsgd/errors.hpp"
#include "dpsgd/model.hpp"

namespace dpsgd {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
}

struct Loaded {
    Dataset train;
    Dataset val;
    std::vector<Tensor> val_images;
    std::vector<std::size_t> val_labels;
};

Loaded load_data(const RunConfig& cfg) {
    Loaded d;
    try {
        d.train = load_mnist_split(cfg.train_images, cfg.train_labels, cfg.normalize);
        d.val = load_mnist_split(cfg.val_images, cfg.val_labels, cfg.normalize);
    } catch (const DataError& e) {
        throw DataError(std::string("startup: ") + e.what());
    }
    if (cfg.subset_size > 0) d.train = subset(d.train, cfg.subset_size, cfg.seed);
    d.val_images.reserve(d.val.count);
    for (std::size_t i = 0; i < d.val.count; ++i) d.val_images.push_back(d.val.sample(i));
    d.val_labels = d.val.labels;
    return d;
}

}  // namespace

double accuracy_loss(double private_acc, double baseline_acc) {
    if (!(baseline_acc > 0.0)) throw InputError("accuracy_loss: baseline accuracy must be > 0");
    return 1.0 - private_acc / baseline_acc;
}

std::string RunMetrics::csv() const {
    std::ostringstream out;
    out << "epoch,step,lr,momentum,train_loss,val_accuracy";
    if (is_private) out << ",epsilon,best_order";
    out << '\n';
    for (const MetricsRow& r : rows) {
        out << r.epoch << ',' << r.step << ',' << fmt(r.lr) << ',' << fmt(r.momentum) << ',';
        if (r.has_train_loss) out << fmt(r.train_loss);
        out << ',';
        if (r.has_eval) out << fmt(r.val_accuracy);
        if (is_private) {
            out << ',';
            if (r.has_privacy) out << fmt(r.epsilon);
            out << ',';
            if (r.has_privacy) out << fmt(r.best_order);
        }
        out << '\n';
    }
    return out.str();
}

std::string RunMetrics::summary_text() const {
    std::ostringstream out;
    for (const auto& [k, v] : summary) out << k << " = " << v << '\n';
    return out.str();
}

RunMetrics train_run(const RunConfig& config) {
    config.validate();
    const Loaded data = load_data(config);
    const std::size_t n_train = data.train.count;
    if (n_train == 0) throw DataError("startup: empty training set");

    Network net = build_network(parse_arch(config.arch), config.seed);

    PrivacyParams privacy = config.privacy;
    if (config.is_private && config.lot_size > 0)
        privacy.sample_rate =
            static_cast<double>(config.lot_size) / static_cast<double>(n_train);
    if (config.is_private) privacy.validate();

    const std::uint64_t steps_per_epoch =
        config.is_private
            ? static_cast<std::uint64_t>(std::ceil(1.0 / privacy.sample_rate))
            : (n_train + config.batch_size - 1) / config.batch_size;
    const std::uint64_t total_steps = steps_per_epoch * config.epochs;

    ScheduleSpec schedule = config.schedule;
    schedule.one_cycle.total_steps = total_steps;
    schedule.validate();
    PlateauState plateau(schedule.plateau);

    RdpLedger ledger;
    MomentumState velocity;
    RunMetrics metrics;
    metrics.is_private = config.is_private;
    metrics.total_steps = total_steps;

    // incremental persistence
    std::ofstream csv_out;
    if (!config.out_dir.empty()) {
        fs::create_directories(config.out_dir);
        write_file(config.out_dir + "/config.txt", config.serialize());
        csv_out.open(config.out_dir + "/metrics.csv");
        if (!csv_out) throw DataError("cannot write metrics in '" + config.out_dir + "'");
        csv_out << "epoch,step,lr,momentum,train_loss,val_accuracy";
        if (config.is_private) csv_out << ",epsilon,best_order";
        csv_out << '\n';
    }
    auto persist_row = [&](const MetricsRow& r) {
        metrics.rows.push_back(r);
        if (!csv_out.is_open()) return;
        csv_out << r.epoch << ',' << r.step << ',' << fmt(r.lr) << ',' << fmt(r.momentum)
                << ',';
        if (r.has_train_loss) csv_out << fmt(r.train_loss);
        csv_out << ',';
        if (r.has_eval) csv_out << fmt(r.val_accuracy);
        if (config.is_private) {
            csv_out << ',';
            if (r.has_privacy) csv_out << fmt(r.epsilon);
            csv_out << ',';
            if (r.has_privacy) csv_out << fmt(r.best_order);
        }
        csv_out << '\n';
    };

    auto finish_summary = [&](bool aborted, const std::string& diagnostic) {
        auto& s = metrics.summary;
        s.clear();
        s.push_back({"run", config.run_name});
        s.push_back({"mode", config.is_private ? "private" : "nonprivate"});
        s.push_back({"hyperparameter_provenance", "project reference defaults"});
        s.push_back({"arch", config.arch});
        s.push_back({"param_count", std::to_string(net.param_count())});
        s.push_back({"seed", std::to_string(config.seed)});
        s.push_back({"epochs", std::to_string(config.epochs)});
        s.push_back({"steps", std::to_string(metrics.rows.size())});
        s.push_back({"train_size", std::to_string(n_train)});
        s.push_back({"final_accuracy", fmt(metrics.final_accuracy)});
        if (config.is_private) {
            s.push_back({"noise_multiplier", fmt(privacy.noise_multiplier)});
            s.push_back({"clip_norm", fmt(privacy.clip_norm)});
            s.push_back({"sample_rate", fmt(privacy.sample_rate)});
            s.push_back({"delta", fmt(privacy.target_delta)});
            s.push_back({"final_epsilon", fmt(metrics.final_epsilon)});
        }
        s.push_back({"aborted", aborted ? "1" : "0"});
        if (!diagnostic.empty()) s.push_back({"diagnostic", diagnostic});
        if (!config.out_dir.empty()) {
            write_file(config.out_dir + "/summary.txt", metrics.summary_text());
            if (!aborted) net.save_checkpoint(config.out_dir + "/model.ckpt");
        }
    };

    std::uint64_t global_step = 0;
    for (std::uint64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        // deterministic epoch shuffle for the non-private minibatch walk
        std::vector<std::size_t> order;
        if (!config.is_private) {
            order.resize(n_train);
            for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
            CounterRng shuffle(config.seed, Stream::sampling, epoch);
            for (std::size_t k = n_train; k-- > 1;)
                std::swap(order[k], order[shuffle.next_u64() % (k + 1)]);
        }

        for (std::uint64_t s = 0; s < steps_per_epoch; ++s, ++global_step) {
            MetricsRow row;
            row.epoch = epoch;
            row.step = global_step + 1;
            row.lr = schedule.kind == ScheduleKind::one_cycle
                         ? one_cycle_lr(schedule.one_cycle, global_step)
                         : plateau.lr();
            row.momentum = one_cycle_momentum(schedule, global_step);

            std::vector<std::size_t> indices;
            if (config.is_private) {
                CounterRng samp(config.seed, Stream::sampling, global_step);
                indices = poisson_sample(n_train, privacy.sample_rate, samp);
            } else {
                const std::size_t lo = s * config.batch_size;
                const std::size_t hi = std::min(lo + config.batch_size, n_train);
                indices.assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                               order.begin() + static_cast<std::ptrdiff_t>(hi));
            }

            if (!indices.empty()) {
                std::vector<Tensor> batch;
                std::vector<std::size_t> labels;
                batch.reserve(indices.size());
                labels.reserve(indices.size());
                for (std::size_t i : indices) {
                    batch.push_back(data.train.sample(i));
                    labels.push_back(data.train.labels[i]);
                }
                GradResult gr = net.per_sample_gradients(batch, labels, config.seed,
                                                         global_step, config.workers);
                row.has_train_loss = true;
                row.train_loss = gr.mean_loss;
                if (!std::isfinite(gr.mean_loss)) {
                    persist_row(row);
                    finish_summary(true, "non-finite training loss at step " +
                                             std::to_string(row.step));
                    throw NumericalError("training aborted: non-finite loss at step " +
                                         std::to_string(row.step));
                }

                std::vector<double> update;
                if (config.is_private) {
                    clip_rows(gr.grads, privacy.clip_norm);
                    CounterRng noise(config.seed, Stream::noise, global_step);
                    update = noisy_aggregate(gr.grads, privacy.noise_multiplier,
                                             privacy.clip_norm, indices.size(), noise);
                } else {
                    update.assign(net.param_count(), 0.0);
                    for (std::size_t r = 0; r < gr.grads.rows; ++r) {
                        const double* p = gr.grads.row(r);
                        for (std::size_t c = 0; c < gr.grads.cols; ++c) update[c] += p[c];
                    }
                    const double inv = 1.0 / static_cast<double>(gr.grads.rows);
                    for (double& u : update) u *= inv;
                }
                net.apply_update(update, row.lr, row.momentum, velocity);
            }
            // the mechanism was invoked even if the lot came back empty
            if (config.is_private)
                ledger.account_step(privacy.sample_rate, privacy.noise_multiplier);

            const bool epoch_end = s + 1 == steps_per_epoch;
            const bool cadence = config.eval_every_steps > 0 &&
                                 (global_step + 1) % config.eval_every_steps == 0;
            if (epoch_end || cadence) {
                double val_loss = 0.0;
                row.val_accuracy = net.evaluate(data.val_images, data.val_labels, &val_loss,
                                                config.workers);
                row.val_loss = val_loss;
                row.has_eval = true;
                metrics.final_accuracy = row.val_accuracy;
                if (config.is_private) {
                    const PrivacyReport rep = ledger.to_dp(privacy.target_delta);
                    row.has_privacy = true;
                    row.epsilon = rep.epsilon;
                    row.best_order = rep.best_order;
                    metrics.final_epsilon = rep.epsilon;
                }
                if (epoch_end && schedule.kind == ScheduleKind::plateau)
                    plateau.observe(val_loss);
            }
            persist_row(row);
        }
        if (csv_out.is_open()) csv_out.flush();
    }

    finish_summary(false, "");
    return metrics;
}

RunConfig reference_one_cycle_dp(const ExperimentOptions& opts) {
    RunConfig rc;
    rc.arch = default_arch();
    rc.seed = opts.seed;
    rc.run_name = "one_cycle_dp";
    rc.is_private = true;
    rc.privacy = PrivacyParams{1.1, 1.0, 0.01, 1e-5};
    rc.epochs = opts.one_cycle_epochs > 0 ? opts.one_cycle_epochs : 2;
    rc.workers = opts.workers;
    rc.schedule.kind = ScheduleKind::one_cycle;
    rc.schedule.one_cycle.max_lr = 0.14;
    rc.schedule.one_cycle.div_factor = 25.0;
    rc.schedule.one_cycle.final_div_factor = 1e4;
    rc.schedule.one_cycle.pct_up = 0.2;
    rc.schedule.cyclical_momentum = true;
    rc.train_images = opts.data_dir + "/train-images-idx3-ubyte";
    rc.train_labels = opts.data_dir + "/train-labels-idx1-ubyte";
    rc.val_images = opts.data_dir + "/t10k-images-idx3-ubyte";
    rc.val_labels = opts.data_dir + "/t10k-labels-idx1-ubyte";
    rc.subset_size = opts.subset;
    return rc;
}

RunConfig reference_plateau_dp(const ExperimentOptions& opts) {
    RunConfig rc = reference_one_cycle_dp(opts);
    rc.run_name = "plateau_dp";
    rc.epochs = opts.plateau_epochs > 0 ? opts.plateau_epochs : 25;
    rc.schedule.kind = ScheduleKind::plateau;
    rc.schedule.plateau.initial_lr = 0.05;
    rc.schedule.plateau.decay_factor = 0.1;
    rc.schedule.plateau.patience = 2;
    rc.schedule.plateau.min_lr = 5e-5;
    rc.schedule.cyclical_momentum = false;
    // same base momentum as the one-cycle runs; only the lr policy differs
    rc.schedule.momentum = 0.95;
    return rc;
}

RunConfig reference_baseline(const ExperimentOptions& opts) {
    RunConfig rc = reference_one_cycle_dp(opts);
    rc.run_name = "baseline";
    rc.is_private = false;
    rc.epochs = opts.baseline_epochs > 0 ? opts.baseline_epochs : 5;
    rc.batch_size = 64;
    rc.schedule.kind = ScheduleKind::one_cycle;
    rc.schedule.one_cycle.max_lr = 0.05;
    rc.schedule.cyclical_momentum = true;
    return rc;
}

ExperimentResult run_experiment(int exp_id, const ExperimentOptions& opts) {
    if (exp_id < 1 || exp_id > 3) throw InputError("experiment: id must be 1, 2 or 3");
    const std::string exp_dir = opts.out_dir + "/exp" + std::to_string(exp_id);
    fs::create_directories(exp_dir);

    ExperimentResult result;
    std::vector<RunConfig> configs{reference_one_cycle_dp(opts), reference_plateau_dp(opts)};
    if (exp_id == 2) configs.push_back(reference_baseline(opts));

    for (RunConfig& rc : configs) {
        rc.out_dir = exp_dir + "/" + rc.run_name;
        result.run_dirs.push_back(rc.out_dir);
        result.runs.push_back(train_run(rc));
    }
    const RunMetrics& one_cycle = result.runs[0];
    const RunMetrics& plat = result.runs[1];

    std::ostringstream fig;
    std::string fig_name;
    if (exp_id == 1 || exp_id == 3) {
        // per-epoch curves; the shorter run leaves blanks
        const bool eps = exp_id == 3;
        fig_name = eps ? "epsilon_vs_epochs.csv" : "accuracy_vs_epochs.csv";
        fig << "epoch,one_cycle_dp,plateau_dp\n";
        std::map<std::uint64_t, std::pair<std::string, std::string>> byepoch;
        for (const MetricsRow& r : one_cycle.rows)
            if (r.has_eval) byepoch[r.epoch].first = fmt(eps ? r.epsilon : r.val_accuracy);
        for (const MetricsRow& r : plat.rows)
            if (r.has_eval) byepoch[r.epoch].second = fmt(eps ? r.epsilon : r.val_accuracy);
        for (const auto& [epoch, vals] : byepoch)
            fig << epoch << ',' << vals.first << ',' << vals.second << '\n';
    } else {
        fig_name = "accuracy_loss_vs_epsilon.csv";
        const RunMetrics& base = result.runs[2];
        fig << "model,epsilon,accuracy_loss,val_accuracy\n";
        fig << "baseline,," << fmt(accuracy_loss(base.final_accuracy, base.final_accuracy))
            << ',' << fmt(base.final_accuracy) << '\n';
        fig << "one_cycle_dp," << fmt(one_cycle.final_epsilon) << ','
            << fmt(accuracy_loss(one_cycle.final_accuracy, base.final_accuracy)) << ','
            << fmt(one_cycle.final_accuracy) << '\n';
        fig << "plateau_dp," << fmt(plat.final_epsilon) << ','
            << fmt(accuracy_loss(plat.final_accuracy, base.final_accuracy)) << ','
            << fmt(plat.final_accuracy) << '\n';
    }
    result.figure_csv_path = exp_dir + "/" + fig_name;
    write_file(result.figure_csv_path, fig.str());
    return result;
}

std::string report_runs(const std::string& runs_dir) {
    if (!fs::exists(runs_dir)) throw DataError("report: no such directory '" + runs_dir + "'");
    std::vector<std::map<std::string, std::string>> summaries;
    for (const auto& entry : fs::recursive_directory_iterator(runs_dir)) {
        if (!entry.is_regular_file() || entry.path().filename() != "summary.txt") continue;
        std::ifstream in(entry.path());
        std::map<std::string, std::string> kv;
        std::string line;
        while (std::getline(in, line)) {
            const std::size_t eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            kv[line.substr(0, eq)] = line.substr(eq + 3);
        }
        if (kv.count("run")) summaries.push_back(std::move(kv));
    }
    std::sort(summaries.begin(), summaries.end(),
              [](const auto& a, const auto& b) { return a.at("run") < b.at("run"); });

    double baseline_acc = 0.0;
    for (const auto& kv : summaries)
        if (kv.at("mode") == "nonprivate") {
            baseline_acc = std::stod(kv.at("final_accuracy"));
            break;
        }

    std::ostringstream out;
    out << "run,mode,final_accuracy,final_epsilon,accuracy_loss\n";
    for (const auto& kv : summaries) {
        const double acc = std::stod(kv.at("final_accuracy"));
        out << kv.at("run") << ',' << kv.at("mode") << ',' << kv.at("final_accuracy") << ',';
        if (kv.count("final_epsilon")) out << kv.at("final_epsilon");
        out << ',';
        if (baseline_acc > 0.0) out << fmt(accuracy_loss(acc, baseline_acc));
        out << '\n';
    }
    return out.str();
}

}  // namespace dpsgd
