#pragma once

#include "tvsim/sched_framework.hpp"

#include <deque>
#include <set>
#include <utility>

namespace tvsim {

// ---------------------------------------------------------------------------
// EDF over periodic budgets

/// Per-VM period and execution budget; the deadline is the next period start.
struct EdfParam {
    Time period;
    Time budget;
    bool operator==(const EdfParam&) const = default;
};

struct EdfState {
    Time deadline;
    Time remaining;
    /// Part of the current activation's CPU time already deducted.
    Time charged;
    std::uint64_t misses = 0;
};

EdfParam parse_edf_param(const nlohmann::json& j, const std::string& where);
nlohmann::json to_json(const EdfParam& p);

/// Earliest-deadline-first with two queues: executable VMs ordered by
/// deadline and exhausted VMs waiting for their next period.
///
/// schedule() replenishes every waiting VM whose period has started, then
/// picks the earliest deadline (ties: lowest VmId) among the executable queue
/// and the running VM. It arms an execution timer for the picked VM's
/// remaining budget and an absolute timer for the next period boundary, both
/// of which request a reschedule. A VM still holding budget at its deadline
/// is counted as a miss; its deadline and budget still advance by whole periods.
class EdfScheduler final : public SchedulerTable {
public:
    [[nodiscard]] std::string_view name() const override { return "edf"; }

    void init() override;
    VcpuRecord* schedule() override;
    void yield() override;
    void block(VcpuRecord& vcpu) override;
    void unblock(VcpuRecord& vcpu) override;
    std::any allocate(VcpuRecord& vcpu) override;
    void enque(VcpuRecord& vcpu) override;

    static EdfState& state(VcpuRecord& vcpu);
    static const EdfState& state(const VcpuRecord& vcpu);

private:
    using Key = std::pair<Time, std::uint32_t>;

    const EdfParam& param(const VcpuRecord& v) const { return params_.at(v.id().index); }
    static Key key(const VcpuRecord& v) { return {state(v).deadline, v.id().index}; }
    void charge(VcpuRecord& v);
    void route(VcpuRecord& v);
    void release_due(Time now);
    /// Moves to the next period and replenishes. If the VM was demanding CPU
    /// and still had budget, the finished period is recorded as a miss.
    void advance_period(VcpuRecord& v, bool demanding);

    std::vector<EdfParam> params_;
    std::set<Key> executable_;
    std::set<Key> waiting_;
    VcpuRecord* current_ = nullptr;
    std::optional<TimerHandle> budget_timer_;
    std::optional<TimerHandle> period_timer_;
};

// ---------------------------------------------------------------------------
// Fixed priority

struct FpParam {
    std::int64_t priority = 0;  // lower value = more urgent
    bool operator==(const FpParam&) const = default;
};

FpParam parse_fp_param(const nlohmann::json& j, const std::string& where);

/// Fixed-priority preemptive; the ready set is keyed by (priority, VmId).
class FixedPriorityScheduler final : public SchedulerTable {
public:
    [[nodiscard]] std::string_view name() const override { return "fp"; }

    void init() override;
    VcpuRecord* schedule() override;
    void yield() override;
    void block(VcpuRecord& vcpu) override;
    void unblock(VcpuRecord& vcpu) override;
    std::any allocate(VcpuRecord& vcpu) override;
    void enque(VcpuRecord& vcpu) override;

private:
    using Key = std::pair<std::int64_t, std::uint32_t>;
    static Key key(const VcpuRecord& v);
    void insert_ready(VcpuRecord& v);

    std::set<Key> ready_;
    VcpuRecord* current_ = nullptr;
};

// ---------------------------------------------------------------------------
// Round robin

inline constexpr Time kDefaultRrQuantum = Time::ms(10);

/// Round robin over a ring of ready VMs. Each dispatch arms a quantum timer
/// that starts when the VM starts executing; a preempted VM goes to the tail.
class RoundRobinScheduler final : public SchedulerTable {
public:
    explicit RoundRobinScheduler(Time quantum);

    [[nodiscard]] std::string_view name() const override { return "rr"; }
    [[nodiscard]] Time quantum() const noexcept { return quantum_; }

    void init() override;
    VcpuRecord* schedule() override;
    void yield() override;
    void block(VcpuRecord& vcpu) override;
    void unblock(VcpuRecord& vcpu) override;
    std::any allocate(VcpuRecord& vcpu) override;
    void enque(VcpuRecord& vcpu) override;

private:
    Time quantum_;
    std::deque<std::uint32_t> ring_;
    VcpuRecord* current_ = nullptr;
    std::optional<TimerHandle> timer_;
};

std::unique_ptr<SchedulerTable> edf_table();
std::unique_ptr<SchedulerTable> fp_table();
std::unique_ptr<SchedulerTable> rr_table(Time quantum);

/// Adds "edf", "fp" and "rr" to a registry.
void register_builtin_schedulers(SchedulerRegistry& registry);

} // namespace tvsim
