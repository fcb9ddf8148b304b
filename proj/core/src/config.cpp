#include "dpsgd/config.hpp"

#include <fstream>
#include <sstream>

#include "dpsgd/errors.hpp"
#include "dpsgd/model.hpp"

namespace dpsgd {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.entries_[key] = value;
    }
    return cfg;
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    entries_[key] = value;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second +
                          "'");
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

RunConfig RunConfig::from_config(const KeyValueConfig& cfg) {
    RunConfig rc;
    rc.arch = cfg.get_string("model.arch", default_arch());
    rc.seed = cfg.get_u64("run.seed", 42);
    rc.run_name = cfg.get_string("run.name", "run");

    const std::string mode = cfg.get_string("run.mode", "private");
    if (mode == "private")
        rc.is_private = true;
    else if (mode == "nonprivate")
        rc.is_private = false;
    else
        throw ConfigError("run.mode must be 'private' or 'nonprivate'");

    rc.privacy.noise_multiplier = cfg.get_double("dp.noise_multiplier", 1.1);
    rc.privacy.clip_norm = cfg.get_double("dp.clip_norm", 1.0);
    rc.privacy.sample_rate = cfg.get_double("dp.sample_rate", 0.01);
    rc.privacy.target_delta = cfg.get_double("dp.target_delta", 1e-5);
    rc.lot_size = cfg.get_u64("dp.lot_size", 0);

    rc.epochs = cfg.get_u64("run.epochs", 2);
    rc.batch_size = cfg.get_u64("run.batch_size", 64);
    rc.workers = static_cast<int>(cfg.get_u64("run.workers", 0));
    rc.eval_every_steps = cfg.get_u64("run.eval_every_steps", 0);

    const std::string kind = cfg.get_string("schedule.kind", "one_cycle");
    if (kind == "one_cycle")
        rc.schedule.kind = ScheduleKind::one_cycle;
    else if (kind == "plateau")
        rc.schedule.kind = ScheduleKind::plateau;
    else
        throw ConfigError("schedule.kind must be 'one_cycle' or 'plateau'");
    rc.schedule.one_cycle.max_lr = cfg.get_double("schedule.max_lr", 1.0);
    rc.schedule.one_cycle.div_factor = cfg.get_double("schedule.div_factor", 25.0);
    rc.schedule.one_cycle.final_div_factor = cfg.get_double("schedule.final_div_factor", 1e4);
    rc.schedule.one_cycle.pct_up = cfg.get_double("schedule.pct_up", 0.3);
    rc.schedule.plateau.initial_lr = cfg.get_double("schedule.initial_lr", 0.05);
    rc.schedule.plateau.decay_factor = cfg.get_double("schedule.decay_factor", 0.1);
    rc.schedule.plateau.patience = cfg.get_u64("schedule.patience", 2);
    rc.schedule.plateau.min_lr = cfg.get_double("schedule.min_lr", 0.0);
    rc.schedule.cyclical_momentum = cfg.get_bool("schedule.cyclical_momentum", true);
    rc.schedule.momentum = cfg.get_double("schedule.momentum", 0.9);
    rc.schedule.momentum_max = cfg.get_double("schedule.momentum_max", 0.95);
    rc.schedule.momentum_min = cfg.get_double("schedule.momentum_min", 0.85);

    const std::string data_dir = cfg.get_string("data.dir", "");
    auto data_path = [&](const std::string& key, const std::string& name) {
        std::string v = cfg.get_string(key, "");
        if (!v.empty()) return v;
        if (data_dir.empty())
            throw ConfigError("config: set data.dir or " + key);
        return data_dir + "/" + name;
    };
    rc.train_images = data_path("data.train_images", "train-images-idx3-ubyte");
    rc.train_labels = data_path("data.train_labels", "train-labels-idx1-ubyte");
    rc.val_images = data_path("data.val_images", "t10k-images-idx3-ubyte");
    rc.val_labels = data_path("data.val_labels", "t10k-labels-idx1-ubyte");
    rc.subset_size = cfg.get_u64("data.subset", 0);
    rc.normalize.mean = cfg.get_double("data.mean", 0.1307);
    rc.normalize.stddev = cfg.get_double("data.std", 0.3081);

    rc.out_dir = cfg.get_string("run.out_dir", "");
    rc.validate();
    return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
    return from_config(KeyValueConfig::parse_file(path));
}

void RunConfig::validate() const {
    parse_arch(arch);
    if (is_private) privacy.validate();
    if (epochs == 0) throw ConfigError("run.epochs must be >= 1");
    if (!is_private && batch_size == 0) throw ConfigError("run.batch_size must be >= 1");
    // one_cycle total_steps is filled in by the training loop; validate the
    // remaining schedule fields here
    if (schedule.kind == ScheduleKind::plateau) schedule.plateau.validate();
}

std::string RunConfig::serialize() const {
    std::ostringstream out;
    out << "model.arch = " << arch << '\n';
    out << "run.name = " << run_name << '\n';
    out << "run.seed = " << seed << '\n';
    out << "run.mode = " << (is_private ? "private" : "nonprivate") << '\n';
    out << "run.epochs = " << epochs << '\n';
    out << "run.batch_size = " << batch_size << '\n';
    out << "run.workers = " << workers << '\n';
    out << "run.eval_every_steps = " << eval_every_steps << '\n';
    if (is_private) {
        out << "dp.noise_multiplier = " << privacy.noise_multiplier << '\n';
        out << "dp.clip_norm = " << privacy.clip_norm << '\n';
        out << "dp.sample_rate = " << privacy.sample_rate << '\n';
        out << "dp.target_delta = " << privacy.target_delta << '\n';
        if (lot_size > 0) out << "dp.lot_size = " << lot_size << '\n';
    }
    if (schedule.kind == ScheduleKind::one_cycle) {
        out << "schedule.kind = one_cycle\n";
        out << "schedule.max_lr = " << schedule.one_cycle.max_lr << '\n';
        out << "schedule.div_factor = " << schedule.one_cycle.div_factor << '\n';
        out << "schedule.final_div_factor = " << schedule.one_cycle.final_div_factor << '\n';
        out << "schedule.pct_up = " << schedule.one_cycle.pct_up << '\n';
        out << "schedule.cyclical_momentum = " << (schedule.cyclical_momentum ? "true" : "false")
            << '\n';
    } else {
        out << "schedule.kind = plateau\n";
        out << "schedule.initial_lr = " << schedule.plateau.initial_lr << '\n';
        out << "schedule.decay_factor = " << schedule.plateau.decay_factor << '\n';
        out << "schedule.patience = " << schedule.plateau.patience << '\n';
        out << "schedule.min_lr = " << schedule.plateau.min_lr << '\n';
    }
    out << "schedule.momentum = " << schedule.momentum << '\n';
    out << "data.train_images = " << train_images << '\n';
    out << "data.train_labels = " << train_labels << '\n';
    out << "data.val_images = " << val_images << '\n';
    out << "data.val_labels = " << val_labels << '\n';
    out << "data.subset = " << subset_size << '\n';
    out << "data.mean = " << normalize.mean << '\n';
    out << "data.std = " << normalize.stddev << '\n';
    out << "run.out_dir = " << out_dir << '\n';
    return out.str();
}

}  // namespace dpsgd
