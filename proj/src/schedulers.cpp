#include "tvsim/schedulers.hpp"

#include "tvsim/config.hpp"

#include <algorithm>

namespace tvsim {

namespace {

std::string param_path(std::size_t vm) { return "scheduler.sched_param[" + std::to_string(vm) + "]"; }

void require_object_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<std::string_view> keys) {
    if (!j.is_object()) {
        throw ConfigError(where, "missing scheduling parameters");
    }
    for (const auto& [k, _] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw ConfigError(where + "." + k, "unknown key");
        }
    }
    for (auto k : keys) {
        if (!j.contains(k)) {
            throw ConfigError(where + "." + std::string(k), "missing required key");
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// EDF

EdfParam parse_edf_param(const nlohmann::json& j, const std::string& where) {
    require_object_keys(j, where, {"period_ns", "budget_ns"});
    EdfParam p{Time{parse_u64(j["period_ns"], where + ".period_ns")}, Time{parse_u64(j["budget_ns"], where + ".budget_ns")}};
    if (p.budget == Time{}) {
        throw ConfigError(where + ".budget_ns", "budget must be positive");
    }
    if (p.budget > p.period) {
        throw ConfigError(where + ".budget_ns", "budget exceeds period");
    }
    return p;
}

nlohmann::json to_json(const EdfParam& p) {
    return {{"period_ns", p.period.count()}, {"budget_ns", p.budget.count()}};
}

EdfState& EdfScheduler::state(VcpuRecord& vcpu) { return std::any_cast<EdfState&>(vcpu.sched_state); }
const EdfState& EdfScheduler::state(const VcpuRecord& vcpu) { return std::any_cast<const EdfState&>(vcpu.sched_state); }

void EdfScheduler::init() {
    executable_.clear();
    waiting_.clear();
    params_.clear();
    current_ = nullptr;
    budget_timer_.reset();
    period_timer_.reset();
}

std::any EdfScheduler::allocate(VcpuRecord& vcpu) {
    auto p = parse_edf_param(vcpu.sched_param(), param_path(vcpu.id().index));
    if (params_.size() <= vcpu.id().index) {
        params_.resize(vcpu.id().index + 1);
    }
    params_[vcpu.id().index] = p;
    return EdfState{now() + p.period, p.budget, Time{}, 0};
}

void EdfScheduler::enque(VcpuRecord& vcpu) { route(vcpu); }

void EdfScheduler::charge(VcpuRecord& v) {
    auto& st = state(v);
    auto used = v.consumed - st.charged;
    st.remaining = used >= st.remaining ? Time{} : st.remaining - used;
    st.charged = v.consumed;
}

void EdfScheduler::route(VcpuRecord& v) {
    if (state(v).remaining == Time{}) {
        waiting_.insert(key(v));
    } else {
        executable_.insert(key(v));
    }
}

void EdfScheduler::advance_period(VcpuRecord& v, bool demanding) {
    auto& st = state(v);
    const auto& p = param(v);
    if (demanding && st.remaining > Time{}) {
        ++st.misses;
        trace(v.id(), rec::kDeadlineMiss,
              "deadline=" + std::to_string(st.deadline.count()) + ";remaining=" + std::to_string(st.remaining.count()));
    }
    st.deadline += p.period;
    st.remaining = p.budget;
}

void EdfScheduler::release_due(Time now) {
    // Waiting VMs: their next period has begun.
    while (!waiting_.empty() && waiting_.begin()->first <= now) {
        auto& v = vcpu(VmId{waiting_.begin()->second});
        waiting_.erase(waiting_.begin());
        advance_period(v, false);
        while (state(v).deadline <= now) {
            advance_period(v, true);
        }
        executable_.insert(key(v));
    }
    // Executable VMs past their deadline missed it.
    while (!executable_.empty() && executable_.begin()->first <= now) {
        auto& v = vcpu(VmId{executable_.begin()->second});
        executable_.erase(executable_.begin());
        while (state(v).deadline <= now) {
            advance_period(v, true);
        }
        executable_.insert(key(v));
    }
    if (current_) {
        while (state(*current_).deadline <= now) {
            advance_period(*current_, true);
        }
    }
}

VcpuRecord* EdfScheduler::schedule() {
    const auto t = now();
    if (current_) {
        charge(*current_);
    }
    release_due(t);

    VcpuRecord* pick = nullptr;
    bool current_eligible = current_ && state(*current_).remaining > Time{};
    if (current_eligible && (executable_.empty() || key(*current_) < *executable_.begin())) {
        pick = current_;
    } else if (!executable_.empty()) {
        pick = &vcpu(VmId{executable_.begin()->second});
        executable_.erase(executable_.begin());
    }
    if (pick != current_) {
        // Queue the displaced VM now so its release counts toward the next boundary.
        if (current_) route(*current_);
        if (pick) state(*pick).charged = Time{};
    }
    current_ = pick;

    if (budget_timer_) cancel_timer(*budget_timer_);
    if (period_timer_) cancel_timer(*period_timer_);
    budget_timer_.reset();
    period_timer_.reset();

    std::optional<Time> next_boundary;
    auto consider = [&](Time d) { next_boundary = next_boundary ? std::min(*next_boundary, d) : d; };
    if (pick) {
        budget_timer_ = register_execution_timer(state(*pick).remaining, TimerAction::SetRescheduleFlag);
        consider(state(*pick).deadline);
    }
    if (!executable_.empty()) consider(executable_.begin()->first);
    if (!waiting_.empty()) consider(waiting_.begin()->first);
    if (next_boundary) {
        period_timer_ = register_timer_event(*next_boundary, TimerAction::SetRescheduleFlag);
    }
    return pick;
}

void EdfScheduler::yield() {
    if (current_) {
        charge(*current_);
        current_ = nullptr;
    }
    if (budget_timer_) {
        cancel_timer(*budget_timer_);
        budget_timer_.reset();
    }
    set_reschedule_flag();
}

void EdfScheduler::block(VcpuRecord& vcpu) {
    charge(vcpu);
    route(vcpu);  // no-op if schedule() already queued it
    set_reschedule_flag();
}

void EdfScheduler::unblock(VcpuRecord& vcpu) {
    // Periods that elapsed while asleep are skipped, not missed.
    auto& st = state(vcpu);
    const auto t = now();
    while (st.deadline <= t) {
        advance_period(vcpu, false);
    }
    route(vcpu);
    set_reschedule_flag();
}

std::unique_ptr<SchedulerTable> edf_table() { return std::make_unique<EdfScheduler>(); }

// ---------------------------------------------------------------------------
// Fixed priority

FpParam parse_fp_param(const nlohmann::json& j, const std::string& where) {
    require_object_keys(j, where, {"priority"});
    const auto& p = j["priority"];
    if (!p.is_number_integer()) {
        throw ConfigError(where + ".priority", "expected an integer");
    }
    return FpParam{p.get<std::int64_t>()};
}

FixedPriorityScheduler::Key FixedPriorityScheduler::key(const VcpuRecord& v) {
    return {std::any_cast<const FpParam&>(v.sched_state).priority, v.id().index};
}

void FixedPriorityScheduler::init() {
    ready_.clear();
    current_ = nullptr;
}

std::any FixedPriorityScheduler::allocate(VcpuRecord& vcpu) {
    return parse_fp_param(vcpu.sched_param(), param_path(vcpu.id().index));
}

void FixedPriorityScheduler::insert_ready(VcpuRecord& v) {
    ready_.insert(key(v));
    if (!current_ || key(v) < key(*current_)) {
        set_reschedule_flag();
    }
}

void FixedPriorityScheduler::enque(VcpuRecord& vcpu) { ready_.insert(key(vcpu)); }

VcpuRecord* FixedPriorityScheduler::schedule() {
    VcpuRecord* pick = current_;
    if (!ready_.empty() && (!current_ || *ready_.begin() < key(*current_))) {
        pick = &vcpu(VmId{ready_.begin()->second});
        ready_.erase(ready_.begin());
    }
    current_ = pick;
    return pick;
}

void FixedPriorityScheduler::yield() {
    current_ = nullptr;
    set_reschedule_flag();
}

void FixedPriorityScheduler::block(VcpuRecord& vcpu) { insert_ready(vcpu); }

void FixedPriorityScheduler::unblock(VcpuRecord& vcpu) { insert_ready(vcpu); }

std::unique_ptr<SchedulerTable> fp_table() { return std::make_unique<FixedPriorityScheduler>(); }

// ---------------------------------------------------------------------------
// Round robin

RoundRobinScheduler::RoundRobinScheduler(Time quantum) : quantum_(quantum) {
    if (quantum == Time{}) {
        throw std::invalid_argument("round-robin quantum must be positive");
    }
}

void RoundRobinScheduler::init() {
    ring_.clear();
    current_ = nullptr;
    timer_.reset();
}

std::any RoundRobinScheduler::allocate(VcpuRecord&) { return {}; }

void RoundRobinScheduler::enque(VcpuRecord& vcpu) { ring_.push_back(vcpu.id().index); }

VcpuRecord* RoundRobinScheduler::schedule() {
    VcpuRecord* pick = current_;
    if (!ring_.empty()) {
        pick = &vcpu(VmId{ring_.front()});
        ring_.pop_front();
    }
    current_ = pick;
    if (timer_) {
        cancel_timer(*timer_);
        timer_.reset();
    }
    if (pick) {
        timer_ = register_execution_timer(quantum_, TimerAction::SetRescheduleFlag);
    }
    return pick;
}

void RoundRobinScheduler::yield() {
    current_ = nullptr;
    if (timer_) {
        cancel_timer(*timer_);
        timer_.reset();
    }
    set_reschedule_flag();
}

void RoundRobinScheduler::block(VcpuRecord& vcpu) { ring_.push_back(vcpu.id().index); }

void RoundRobinScheduler::unblock(VcpuRecord& vcpu) {
    ring_.push_back(vcpu.id().index);
    if (!current_) {
        set_reschedule_flag();
    }
}

std::unique_ptr<SchedulerTable> rr_table(Time quantum) { return std::make_unique<RoundRobinScheduler>(quantum); }

// ---------------------------------------------------------------------------

void register_builtin_schedulers(SchedulerRegistry& registry) {
    auto no_quantum = [](const SystemSpec& spec) {
        if (spec.scheduler.quantum) {
            throw ConfigError("scheduler.quantum_ns", "only the rr scheduler takes a quantum");
        }
    };
    registry.add("edf", {[](const SystemSpec&) { return edf_table(); },
                         [no_quantum](const SystemSpec& spec) {
                             no_quantum(spec);
                             for (const auto& vm : spec.vms) parse_edf_param(vm.sched_param, param_path(vm.id.index));
                         }});
    registry.add("fp", {[](const SystemSpec&) { return fp_table(); },
                        [no_quantum](const SystemSpec& spec) {
                            no_quantum(spec);
                            for (const auto& vm : spec.vms) parse_fp_param(vm.sched_param, param_path(vm.id.index));
                        }});
    registry.add("rr", {[](const SystemSpec& spec) { return rr_table(spec.scheduler.quantum.value_or(kDefaultRrQuantum)); },
                        [](const SystemSpec& spec) {
                            if (spec.scheduler.quantum && *spec.scheduler.quantum == Time{}) {
                                throw ConfigError("scheduler.quantum_ns", "quantum must be positive");
                            }
                            for (const auto& vm : spec.vms) {
                                const auto& p = vm.sched_param;
                                if (!p.is_null() && !(p.is_object() && p.empty())) {
                                    throw ConfigError(param_path(vm.id.index), "rr takes no per-VM parameters");
                                }
                            }
                        }});
}

} // namespace tvsim
