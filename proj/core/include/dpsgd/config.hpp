#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dpsgd/dp.hpp"
#include "dpsgd/mnist.hpp"
#include "dpsgd/schedule.hpp"

namespace dpsgd {

// Flat key=value configuration, '#' comments, keys namespaced as
// model.*, dp.*, schedule.*, data.*, run.*.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_text(const std::string& text);

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

struct RunConfig {
    // model
    std::string arch;
    std::uint64_t seed = 42;

    // mode
    bool is_private = true;
    PrivacyParams privacy;          // ignored when non-private
    std::size_t lot_size = 0;       // optional; derives sample_rate when > 0

    // loop
    std::uint64_t epochs = 2;
    std::size_t batch_size = 64;    // non-private minibatch size
    int workers = 0;
    std::uint64_t eval_every_steps = 0;  // 0 = epoch boundaries only

    // schedule
    ScheduleSpec schedule;

    // data
    std::string train_images;
    std::string train_labels;
    std::string val_images;
    std::string val_labels;
    std::size_t subset_size = 0;    // 0 = full
    NormalizeParams normalize;

    // outputs
    std::string out_dir;
    std::string run_name = "run";

    static RunConfig from_config(const KeyValueConfig& cfg);
    static RunConfig from_file(const std::string& path);

    void validate() const;
    // resolved key=value view, echoed next to run outputs
    std::string serialize() const;
};

}  // namespace dpsgd
