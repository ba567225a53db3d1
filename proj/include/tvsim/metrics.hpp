#pragma once

#include "tvsim/trace.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace tvsim {

struct VmMetrics {
    Time cpu_time;
    std::uint64_t switch_in_count = 0;
    std::uint64_t deadline_misses = 0;
    std::uint64_t irqs_received = 0;
    bool operator==(const VmMetrics&) const = default;
};

struct MetricsReport {
    Time horizon;
    std::vector<VmMetrics> vms;
    Time hypervisor_overhead_time;
    Time idle_time;
    std::uint64_t ivc_transfers = 0;
    /// Sum of VM CPU time over the horizon.
    double utilization = 0.0;

    [[nodiscard]] std::uint64_t total_deadline_misses() const;
    [[nodiscard]] Time total_cpu_time() const;

    bool operator==(const MetricsReport&) const = default;
};

/// Derives the report from trace records alone: `config` gives the horizon
/// and VM count, `run`/`idle` give time shares, cost charges give overhead.
MetricsReport compute_metrics(const Trace& trace);

nlohmann::ordered_json to_json(const MetricsReport& m);

} // namespace tvsim
