#pragma once

#include "tvsim/core.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tvsim {

struct EdfTask {
    Time period;
    Time budget;
    bool operator==(const EdfTask&) const = default;
};

/// Periods used by the generators: every divisor of 100 ms from 1 ms up, so
/// any mix has a hyperperiod of at most 100 ms.
inline constexpr std::array<std::uint64_t, 9> kPeriodChoicesMs = {1, 2, 4, 5, 10, 20, 25, 50, 100};

struct EdfSetOptions {
    std::size_t min_vms = 2;
    std::size_t max_vms = 6;
    /// Total utilization is drawn uniformly from [min_util, max_util].
    double min_util = 0.2;
    double max_util = 1.0;
    /// Makes the total utilization exactly 1 (overrides the range).
    bool exact_full = false;
    /// Budgets are multiples of this.
    Time granularity = Time::us(1);
};

[[nodiscard]] double utilization(std::span<const EdfTask> tasks);
/// Exact comparison of the total utilization against 1: -1, 0 or +1.
[[nodiscard]] int compare_utilization_to_one(std::span<const EdfTask> tasks);
[[nodiscard]] Time hyperperiod(std::span<const EdfTask> tasks);

/// Random periodic VM set. Per-VM utilizations come from UUniFast; budgets
/// are rounded down to the granularity (at least one unit), so the realized
/// total can sit slightly below the drawn one.
std::vector<EdfTask> random_edf_set(std::mt19937_64& rng, const EdfSetOptions& opt);

/// One VM per task, each with a private 1 MB region and a CPU-bound looping
/// workload, scheduled by EDF.
SystemSpec make_edf_system(std::span<const EdfTask> tasks, const CostModel& cm);

/// A mixed system for the `generate` command: EDF VMs with device
/// interrupts, Hyp calls, distributor accesses, wfi and one IVC channel.
SystemSpec random_system(std::uint64_t seed);

} // namespace tvsim
