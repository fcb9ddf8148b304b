#include "dpsgd/schedule.hpp"

#include <cmath>
#include <limits>

#include "dpsgd/errors.hpp"

namespace dpsgd {

namespace {

constexpr double kPi = 3.14159265358979323846;

// cosine interpolation from `from` at t=0 to `to` at t=1; endpoints are
// returned exactly so schedule boundaries carry no rounding
double cosine_interp(double from, double to, double t) {
    if (t <= 0.0) return from;
    if (t >= 1.0) return to;
    return to + (from - to) * 0.5 * (1.0 + std::cos(kPi * t));
}

}  // namespace

void OneCycleSpec::validate() const {
    if (!(max_lr > 0.0)) throw ConfigError("one_cycle: max_lr must be > 0");
    if (!(pct_up > 0.0 && pct_up < 1.0)) throw ConfigError("one_cycle: pct_up must lie in (0, 1)");
    if (!(div_factor > 1.0)) throw ConfigError("one_cycle: div_factor must be > 1");
    if (!(final_div_factor > 1.0)) throw ConfigError("one_cycle: final_div_factor must be > 1");
    if (total_steps < 2) throw ConfigError("one_cycle: total_steps must be >= 2");
}

std::uint64_t OneCycleSpec::up_steps() const {
    auto up = static_cast<std::uint64_t>(std::llround(pct_up * static_cast<double>(total_steps)));
    if (up == 0) up = 1;
    if (up >= total_steps) up = total_steps - 1;
    return up;
}

void PlateauSpec::validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("plateau: initial_lr must be > 0");
    if (!(decay_factor > 0.0 && decay_factor < 1.0))
        throw ConfigError("plateau: decay_factor must lie in (0, 1)");
    if (!(min_lr >= 0.0)) throw ConfigError("plateau: min_lr must be >= 0");
    if (patience == 0) throw ConfigError("plateau: patience must be >= 1");
}

void ScheduleSpec::validate() const {
    if (kind == ScheduleKind::one_cycle)
        one_cycle.validate();
    else
        plateau.validate();
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ConfigError("schedule: momentum must lie in [0, 1)");
    if (!(momentum_min <= momentum_max && momentum_max < 1.0))
        throw ConfigError("schedule: momentum band invalid");
}

double one_cycle_lr(const OneCycleSpec& spec, std::uint64_t step) {
    spec.validate();
    if (step > spec.total_steps) throw InputError("one_cycle_lr: step out of range");
    const double lr_start = spec.max_lr / spec.div_factor;
    const double lr_final = spec.max_lr / (spec.div_factor * spec.final_div_factor);
    const std::uint64_t up = spec.up_steps();
    if (step <= up) {
        const double t = static_cast<double>(step) / static_cast<double>(up);
        return cosine_interp(lr_start, spec.max_lr, t);
    }
    const double t =
        static_cast<double>(step - up) / static_cast<double>(spec.total_steps - up);
    return cosine_interp(spec.max_lr, lr_final, t);
}

double one_cycle_momentum(const ScheduleSpec& spec, std::uint64_t step) {
    spec.validate();
    if (!spec.cyclical_momentum || spec.kind != ScheduleKind::one_cycle) return spec.momentum;
    const OneCycleSpec& oc = spec.one_cycle;
    if (step > oc.total_steps) throw InputError("one_cycle_momentum: step out of range");
    const std::uint64_t up = oc.up_steps();
    if (step <= up) {
        const double t = static_cast<double>(step) / static_cast<double>(up);
        return cosine_interp(spec.momentum_max, spec.momentum_min, t);
    }
    const double t = static_cast<double>(step - up) / static_cast<double>(oc.total_steps - up);
    return cosine_interp(spec.momentum_min, spec.momentum_max, t);
}

PlateauState::PlateauState(const PlateauSpec& spec)
    : spec_(spec), lr_(spec.initial_lr), best_loss_(std::numeric_limits<double>::infinity()) {
    spec_.validate();
}

double PlateauState::observe(double val_loss) {
    if (val_loss < best_loss_ * (1.0 - spec_.improvement_rel)) {
        best_loss_ = val_loss;
        bad_epochs_ = 0;
    } else {
        ++bad_epochs_;
        if (bad_epochs_ >= spec_.patience) {
            lr_ = std::max(lr_ * spec_.decay_factor, spec_.min_lr);
            bad_epochs_ = 0;
        }
    }
    return lr_;
}

}  // namespace dpsgd
