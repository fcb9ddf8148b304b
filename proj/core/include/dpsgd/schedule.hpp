#pragma once

#include <cstdint>
#include <vector>

namespace dpsgd {

// Learning-rate policies: the one-cycle schedule (cosine ramp to a large
// peak, then anneal far below the start) and the plateau-decay baseline.

struct OneCycleSpec {
    double max_lr = 1.0;
    double div_factor = 25.0;
    double final_div_factor = 1e4;
    double pct_up = 0.3;
    std::uint64_t total_steps = 0;

    void validate() const;
    std::uint64_t up_steps() const;
};

struct PlateauSpec {
    double initial_lr = 0.05;
    double decay_factor = 0.1;
    std::uint64_t patience = 2;  // epochs without improvement before decay
    double min_lr = 0.0;
    double improvement_rel = 1e-4;

    void validate() const;
};

enum class ScheduleKind { one_cycle, plateau };

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::one_cycle;
    OneCycleSpec one_cycle;
    PlateauSpec plateau;
    bool cyclical_momentum = true;  // only meaningful for one_cycle
    double momentum = 0.9;          // constant momentum when cycling is off
    double momentum_max = 0.95;
    double momentum_min = 0.85;

    void validate() const;
};

// Piecewise-cosine: max_lr/div_factor -> max_lr over the up phase, then
// max_lr -> max_lr/(div_factor * final_div_factor) over the rest.
double one_cycle_lr(const OneCycleSpec& spec, std::uint64_t step);

// Inverse shape of the lr curve between momentum_max and momentum_min;
// returns the constant momentum when cycling is disabled.
double one_cycle_momentum(const ScheduleSpec& spec, std::uint64_t step);

// Mutable plateau state owned by the training loop; observe() is called
// once per epoch with that epoch's validation loss.
class PlateauState {
public:
    explicit PlateauState(const PlateauSpec& spec);

    double lr() const { return lr_; }
    double observe(double val_loss);

private:
    PlateauSpec spec_;
    double lr_;
    double best_loss_;
    std::uint64_t bad_epochs_ = 0;
};

}  // namespace dpsgd
