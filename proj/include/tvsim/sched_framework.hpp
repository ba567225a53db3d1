#pragma once

#include "tvsim/core.hpp"
#include "tvsim/trace.hpp"

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tvsim {

class SchedulingFramework;

enum class CheckpointKind : std::uint8_t {
    Boot,
    EndOfHypCall,
    EndOfPhysicalInterrupt,
};

std::string_view to_string(CheckpointKind k);

/// What a fired timer does inside the (modeled) timer interrupt handler.
enum class TimerAction : std::uint8_t {
    SetRescheduleFlag,
    None,
};

struct TimerHandle {
    std::uint64_t id = 0;
    auto operator<=>(const TimerHandle&) const = default;
};

/// Services the framework needs from whoever drives virtual time.
class HypervisorHooks {
public:
    virtual ~HypervisorHooks() = default;

    [[nodiscard]] virtual Time now() const = 0;
    virtual void arm_timer(TimerHandle handle, Time at) = 0;
    virtual void disarm_timer(TimerHandle handle) = 0;
    /// Spends hypervisor time; virtual time advances by the charged amount.
    virtual void charge(CostField field, std::string_view kind, std::string detail) = 0;
    virtual void record(Actor actor, std::string_view kind, std::string detail) = 0;
};

/// The seven-entry scheduling function table. The hypervisor calls these
/// on scheduling events; implementations keep their own queues and must
/// never change a vCPU's run_state.
class SchedulerTable {
public:
    virtual ~SchedulerTable() = default;

    [[nodiscard]] virtual std::string_view name() const = 0;

    /// Called once at boot.
    virtual void init() = 0;
    /// Picks the vCPU to run next; nullptr when nothing is executable.
    virtual VcpuRecord* schedule() = 0;
    /// The running vCPU entered sleep (wfi) and is no longer executable.
    virtual void yield() = 0;
    /// A running vCPU was preempted by another.
    virtual void block(VcpuRecord& vcpu) = 0;
    /// A sleeping or blocked vCPU became executable.
    virtual void unblock(VcpuRecord& vcpu) = 0;
    /// Builds the dynamic scheduling state when the vCPU is constructed.
    virtual std::any allocate(VcpuRecord& vcpu) = 0;
    /// Pushes a vCPU into the scheduler's wait structure.
    virtual void enque(VcpuRecord& vcpu) = 0;

protected:
    [[nodiscard]] Time now() const;
    void set_reschedule_flag();
    TimerHandle register_timer_event(Time at, TimerAction action);
    /// Timer that fires `budget` after the selected vCPU starts executing,
    /// i.e. after any world switch the current dispatch incurs.
    TimerHandle register_execution_timer(Time budget, TimerAction action);
    void cancel_timer(TimerHandle handle);
    [[nodiscard]] std::span<VcpuRecord> vcpus();
    VcpuRecord& vcpu(VmId id);
    void trace(VmId vm, std::string_view kind, std::string detail);

private:
    friend class SchedulingFramework;
    SchedulingFramework* framework_ = nullptr;
};

/// Dispatch contract around a SchedulerTable: callback ordering, the
/// reschedule-request flag, timers, and context switches at checkpoints.
class SchedulingFramework {
public:
    SchedulingFramework(std::unique_ptr<SchedulerTable> table, std::vector<VcpuRecord> vcpus,
                        HypervisorHooks& hooks);
    SchedulingFramework(const SchedulingFramework&) = delete;
    SchedulingFramework& operator=(const SchedulingFramework&) = delete;

    /// init once, allocate every vCPU, then enque the Ready ones, all in id order.
    void init();

    /// Runs the dispatcher if the reschedule flag is set. Returns true if
    /// the running vCPU changed.
    bool checkpoint(CheckpointKind kind);

    /// The running vCPU executed wfi (`Sleeping`) or halted (`Blocked`).
    void on_vm_sleep(VmId vm, RunState into = RunState::Sleeping);
    void on_vm_wakeup(VmId vm);

    void set_reschedule_flag();
    [[nodiscard]] bool reschedule_requested() const noexcept { return flag_; }

    TimerHandle register_timer_event(Time at, TimerAction action);
    TimerHandle register_execution_timer(Time budget, TimerAction action);
    void cancel_timer(TimerHandle handle);
    /// Runs a due timer's action. Returns false for unknown or cancelled handles.
    bool fire_timer(TimerHandle handle);
    [[nodiscard]] bool timer_armed(TimerHandle handle) const;

    /// The Running vCPU, if any.
    [[nodiscard]] VcpuRecord* current() noexcept { return current_; }
    /// The vCPU whose context is loaded on the CPU (last one to run).
    [[nodiscard]] std::optional<VmId> loaded() const noexcept { return loaded_; }
    [[nodiscard]] std::span<VcpuRecord> vcpus() noexcept { return vcpus_; }
    [[nodiscard]] VcpuRecord& vcpu(VmId id);
    [[nodiscard]] SchedulerTable& table() noexcept { return *table_; }
    [[nodiscard]] HypervisorHooks& hooks() noexcept { return hooks_; }
    [[nodiscard]] bool initialized() const noexcept { return initialized_; }

private:
    struct TimerEntry {
        Time at;
        TimerAction action;
    };
    struct PendingExecTimer {
        TimerHandle handle;
        Time budget;
        TimerAction action;
    };

    void require_init(std::string_view what) const;
    void arm_pending_exec_timers();

    std::unique_ptr<SchedulerTable> table_;
    std::vector<VcpuRecord> vcpus_;
    HypervisorHooks& hooks_;
    bool initialized_ = false;
    bool flag_ = false;
    bool in_dispatch_ = false;
    VcpuRecord* current_ = nullptr;
    std::optional<VmId> loaded_;
    std::uint64_t next_timer_id_ = 1;
    std::map<TimerHandle, TimerEntry> timers_;
    std::vector<PendingExecTimer> pending_exec_timers_;
};

// ---------------------------------------------------------------------------
// Plugin registry

struct SchedulerPlugin {
    std::function<std::unique_ptr<SchedulerTable>(const SystemSpec&)> make;
    /// Throws ConfigError when the scheduler section or per-VM params are invalid.
    std::function<void(const SystemSpec&)> validate;
};

class SchedulerRegistry {
public:
    /// Process-wide registry, pre-populated with "edf", "fp" and "rr".
    static SchedulerRegistry& global();

    void add(std::string name, SchedulerPlugin plugin);
    [[nodiscard]] const SchedulerPlugin* find(std::string_view name) const;
    [[nodiscard]] std::vector<std::string> names() const;

private:
    std::map<std::string, SchedulerPlugin, std::less<>> plugins_;
};

/// Validates the scheduler section against the global registry.
void validate_scheduler_config(const SystemSpec& spec);

std::unique_ptr<SchedulerTable> make_scheduler(const SystemSpec& spec);

} // namespace tvsim
