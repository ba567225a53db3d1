#pragma once

#include "tvsim/metrics.hpp"
#include "tvsim/sched_framework.hpp"
#include "tvsim/trace.hpp"

#include <memory>

namespace tvsim {

struct RunResult {
    Trace trace;
    MetricsReport metrics;
};

/// A contract violation stopped the run; carries the trace up to that point,
/// ending with a `halt` record that names the violation.
class SimulationAborted : public ContractViolation {
public:
    SimulationAborted(const std::string& what, Trace partial)
        : ContractViolation(what), partial_(std::move(partial)) {}
    [[nodiscard]] const Trace& partial_trace() const noexcept { return partial_; }

private:
    Trace partial_;
};

/// Simulates `spec` on one physical CPU for `horizon` of virtual time.
///
/// Guests run their workload scripts; every Hyp-mode entry (Hyp call, wfi,
/// trapped MMIO, stage-2 fault, IVC request, physical or timer interrupt)
/// pauses the running VM, charges its cost, and ends at a dispatch
/// checkpoint. Events due at the same instant run interrupts first, then by
/// insertion order. Events due exactly at the horizon are still handled;
/// costs that would cross it are clipped, so per-VM CPU time, hypervisor
/// time and idle time add up to the horizon exactly.
///
/// Throws std::invalid_argument for a zero horizon and SimulationAborted on
/// contract violations.
RunResult run(const SystemSpec& spec, Time horizon);

/// As above, but with an explicit scheduler table in place of the one the
/// spec names.
RunResult run(const SystemSpec& spec, Time horizon, std::unique_ptr<SchedulerTable> table);

} // namespace tvsim
