#include "tvsim/sched_framework.hpp"

#include "tvsim/schedulers.hpp"

#include <algorithm>

namespace tvsim {

std::string_view to_string(CheckpointKind k) {
    switch (k) {
    case CheckpointKind::Boot: return "boot";
    case CheckpointKind::EndOfHypCall: return "end_of_hyp_call";
    case CheckpointKind::EndOfPhysicalInterrupt: return "end_of_physical_interrupt";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// SchedulerTable helpers

namespace {

SchedulingFramework& attached(SchedulingFramework* fw) {
    if (!fw) {
        throw std::logic_error("scheduler table used before being attached to a framework");
    }
    return *fw;
}

std::vector<RunState> snapshot(std::span<const VcpuRecord> vcpus) {
    std::vector<RunState> out;
    out.reserve(vcpus.size());
    for (const auto& v : vcpus) out.push_back(v.run_state);
    return out;
}

} // namespace

Time SchedulerTable::now() const { return attached(framework_).hooks().now(); }
void SchedulerTable::set_reschedule_flag() { attached(framework_).set_reschedule_flag(); }
TimerHandle SchedulerTable::register_timer_event(Time at, TimerAction action) {
    return attached(framework_).register_timer_event(at, action);
}
TimerHandle SchedulerTable::register_execution_timer(Time budget, TimerAction action) {
    return attached(framework_).register_execution_timer(budget, action);
}
void SchedulerTable::cancel_timer(TimerHandle handle) { attached(framework_).cancel_timer(handle); }
std::span<VcpuRecord> SchedulerTable::vcpus() { return attached(framework_).vcpus(); }
VcpuRecord& SchedulerTable::vcpu(VmId id) { return attached(framework_).vcpu(id); }
void SchedulerTable::trace(VmId vm, std::string_view kind, std::string detail) {
    attached(framework_).hooks().record(Actor::of(vm), kind, std::move(detail));
}

// ---------------------------------------------------------------------------
// SchedulingFramework

SchedulingFramework::SchedulingFramework(std::unique_ptr<SchedulerTable> table, std::vector<VcpuRecord> vcpus,
                                         HypervisorHooks& hooks)
    : table_(std::move(table)), vcpus_(std::move(vcpus)), hooks_(hooks) {
    if (!table_) {
        throw std::invalid_argument("scheduling framework needs a scheduler table");
    }
    for (std::size_t i = 0; i < vcpus_.size(); ++i) {
        if (vcpus_[i].id().index != i) {
            throw std::invalid_argument("vCPU records must be ordered by dense VM id");
        }
    }
}

VcpuRecord& SchedulingFramework::vcpu(VmId id) {
    if (id.index >= vcpus_.size()) {
        throw std::out_of_range("unknown VM " + to_string(id));
    }
    return vcpus_[id.index];
}

void SchedulingFramework::require_init(std::string_view what) const {
    if (!initialized_) {
        throw ContractViolation(std::string(what) + " before framework initialization");
    }
}

namespace {

// Runs a table callback and checks that it left every run_state untouched.
template <typename F>
decltype(auto) guarded(std::span<VcpuRecord> vcpus, std::string_view callback, F&& fn) {
    auto before = snapshot(vcpus);
    auto check = [&] {
        auto after = snapshot(vcpus);
        for (std::size_t i = 0; i < before.size(); ++i) {
            if (before[i] != after[i]) {
                throw ContractViolation(std::string(callback) + " changed the run state of vm" + std::to_string(i) +
                                        " (" + std::string(to_string(before[i])) + " -> " +
                                        std::string(to_string(after[i])) + ")");
            }
        }
    };
    if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
        fn();
        check();
    } else {
        decltype(auto) result = fn();
        check();
        return result;
    }
}

} // namespace

void SchedulingFramework::init() {
    if (initialized_) {
        throw ContractViolation("scheduling framework initialized twice");
    }
    initialized_ = true;
    table_->framework_ = this;
    hooks_.record(Actor::hypervisor(), rec::kInit, "scheduler=" + std::string(table_->name()));
    guarded(vcpus_, "init", [&] { table_->init(); });
    for (auto& v : vcpus_) {
        hooks_.record(Actor::of(v.id()), rec::kAllocate, "");
        v.sched_state = guarded(vcpus_, "allocate", [&] { return table_->allocate(v); });
    }
    for (auto& v : vcpus_) {
        if (v.run_state != RunState::Ready) continue;  // parked before boot
        hooks_.record(Actor::of(v.id()), rec::kEnque, "");
        guarded(vcpus_, "enque", [&] { table_->enque(v); });
    }
}

void SchedulingFramework::set_reschedule_flag() {
    require_init("set_reschedule_flag");
    flag_ = true;
    hooks_.record(Actor::hypervisor(), rec::kFlagSet, "");
}

bool SchedulingFramework::checkpoint(CheckpointKind kind) {
    require_init("dispatch checkpoint");
    hooks_.record(Actor::hypervisor(), rec::kCheckpoint,
                  "kind=" + std::string(to_string(kind)) + ";flag=" + (flag_ ? "1" : "0"));
    if (!flag_) {
        return false;
    }
    flag_ = false;
    in_dispatch_ = true;

    VcpuRecord* next = guarded(vcpus_, "schedule", [&] { return table_->schedule(); });
    hooks_.record(Actor::hypervisor(), rec::kSchedule, "ret=" + (next ? to_string(next->id()) : std::string("none")));

    if (next) {
        auto in_range = std::any_of(vcpus_.begin(), vcpus_.end(), [next](const VcpuRecord& v) { return &v == next; });
        if (!in_range) {
            in_dispatch_ = false;
            throw ContractViolation("schedule returned a vCPU that does not belong to this framework");
        }
        if (next != current_ && next->run_state != RunState::Ready) {
            in_dispatch_ = false;
            throw ContractViolation("schedule returned " + to_string(next->id()) + " which is " +
                                    std::string(to_string(next->run_state)));
        }
    }

    bool switched = false;
    if (next != current_) {
        switched = true;
        if (auto* prev = current_) {
            prev->run_state = RunState::Ready;
            current_ = nullptr;
            hooks_.record(Actor::of(prev->id()), rec::kBlock, "");
            guarded(vcpus_, "block", [&] { table_->block(*prev); });
        }
        current_ = next;
        if (next) {
            if (loaded_ && *loaded_ != next->id()) {
                hooks_.charge(CostField::WorldSwitch, "world_switch",
                              "from=" + to_string(*loaded_) + ";to=" + to_string(next->id()));
            }
            next->run_state = RunState::Running;
            next->consumed = Time{};
            loaded_ = next->id();
            hooks_.record(Actor::of(next->id()), rec::kDispatch, "");
        }
    }
    in_dispatch_ = false;
    arm_pending_exec_timers();
    return switched;
}

void SchedulingFramework::on_vm_sleep(VmId vm, RunState into) {
    require_init("on_vm_sleep");
    if (into != RunState::Sleeping && into != RunState::Blocked) {
        throw std::invalid_argument("a vCPU can only sleep into Sleeping or Blocked");
    }
    if (!current_ || current_->id() != vm) {
        throw ContractViolation("yield from " + to_string(vm) + " which is not the running vCPU");
    }
    current_->run_state = into;
    current_ = nullptr;
    hooks_.record(Actor::of(vm), rec::kYield, "into=" + std::string(to_string(into)));
    guarded(vcpus_, "yield", [&] { table_->yield(); });
}

void SchedulingFramework::on_vm_wakeup(VmId vm) {
    require_init("on_vm_wakeup");
    auto& v = vcpu(vm);
    if (v.run_state != RunState::Sleeping && v.run_state != RunState::Blocked) {
        throw ContractViolation("wakeup of " + to_string(vm) + " which is " + std::string(to_string(v.run_state)));
    }
    v.run_state = RunState::Ready;
    hooks_.record(Actor::of(vm), rec::kUnblock, "");
    guarded(vcpus_, "unblock", [&] { table_->unblock(v); });
}

TimerHandle SchedulingFramework::register_timer_event(Time at, TimerAction action) {
    require_init("register_timer_event");
    auto now = hooks_.now();
    if (at < now) {
        throw std::invalid_argument("timer event at " + std::to_string(at.count()) + " ns is before now (" +
                                    std::to_string(now.count()) + " ns)");
    }
    TimerHandle h{next_timer_id_++};
    timers_.emplace(h, TimerEntry{at, action});
    hooks_.record(Actor::hypervisor(), rec::kTimerArm, "id=" + std::to_string(h.id) + ";at=" + std::to_string(at.count()));
    hooks_.arm_timer(h, at);
    return h;
}

TimerHandle SchedulingFramework::register_execution_timer(Time budget, TimerAction action) {
    require_init("register_execution_timer");
    if (!in_dispatch_) {
        return register_timer_event(hooks_.now() + budget, action);
    }
    TimerHandle h{next_timer_id_++};
    pending_exec_timers_.push_back({h, budget, action});
    return h;
}

void SchedulingFramework::arm_pending_exec_timers() {
    auto pending = std::move(pending_exec_timers_);
    pending_exec_timers_.clear();
    auto now = hooks_.now();
    for (const auto& p : pending) {
        auto at = now + p.budget;
        timers_.emplace(p.handle, TimerEntry{at, p.action});
        hooks_.record(Actor::hypervisor(), rec::kTimerArm,
                      "id=" + std::to_string(p.handle.id) + ";at=" + std::to_string(at.count()));
        hooks_.arm_timer(p.handle, at);
    }
}

void SchedulingFramework::cancel_timer(TimerHandle handle) {
    auto pending = std::find_if(pending_exec_timers_.begin(), pending_exec_timers_.end(),
                                [&](const PendingExecTimer& p) { return p.handle == handle; });
    if (pending != pending_exec_timers_.end()) {
        pending_exec_timers_.erase(pending);
        return;
    }
    auto it = timers_.find(handle);
    if (it == timers_.end()) {
        return;
    }
    timers_.erase(it);
    hooks_.record(Actor::hypervisor(), rec::kTimerCancel, "id=" + std::to_string(handle.id));
    hooks_.disarm_timer(handle);
}

bool SchedulingFramework::timer_armed(TimerHandle handle) const { return timers_.count(handle) != 0; }

bool SchedulingFramework::fire_timer(TimerHandle handle) {
    auto it = timers_.find(handle);
    if (it == timers_.end()) {
        return false;
    }
    auto entry = it->second;
    timers_.erase(it);
    hooks_.record(Actor::hypervisor(), rec::kTimerFire, "id=" + std::to_string(handle.id));
    switch (entry.action) {
    case TimerAction::SetRescheduleFlag: set_reschedule_flag(); break;
    case TimerAction::None: break;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Registry

SchedulerRegistry& SchedulerRegistry::global() {
    static SchedulerRegistry registry = [] {
        SchedulerRegistry r;
        register_builtin_schedulers(r);
        return r;
    }();
    return registry;
}

void SchedulerRegistry::add(std::string name, SchedulerPlugin plugin) { plugins_[std::move(name)] = std::move(plugin); }

const SchedulerPlugin* SchedulerRegistry::find(std::string_view name) const {
    auto it = plugins_.find(name);
    return it == plugins_.end() ? nullptr : &it->second;
}

std::vector<std::string> SchedulerRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : plugins_) out.push_back(name);
    return out;
}

void validate_scheduler_config(const SystemSpec& spec) {
    const auto* plugin = SchedulerRegistry::global().find(spec.scheduler.name);
    if (!plugin) {
        throw ConfigError("scheduler.name", "unknown scheduler \"" + spec.scheduler.name + "\"");
    }
    if (plugin->validate) {
        plugin->validate(spec);
    }
}

std::unique_ptr<SchedulerTable> make_scheduler(const SystemSpec& spec) {
    const auto* plugin = SchedulerRegistry::global().find(spec.scheduler.name);
    if (!plugin) {
        throw ConfigError("scheduler.name", "unknown scheduler \"" + spec.scheduler.name + "\"");
    }
    return plugin->make(spec);
}

} // namespace tvsim
