#include "tvsim/engine.hpp"

#include "tvsim/config.hpp"
#include "tvsim/ivc.hpp"
#include "tvsim/memmap.hpp"
#include "tvsim/vgic.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

namespace tvsim {

namespace {

enum class EventKind : std::uint8_t { PhysIrq, TimerFire, ComputeEnd };

struct Event {
    Time at;
    std::uint8_t cls = 0;  // 0: interrupt class, 1: compute end
    std::uint64_t seq = 0;
    EventKind kind = EventKind::PhysIrq;
    std::uint32_t target = 0;  // irq number or VM index
    std::uint64_t handle = 0;  // timer id
    std::size_t source = 0;    // irq_events index
    std::uint64_t occurrence = 0;

    bool operator<(const Event& o) const { return std::tie(at, cls, seq) < std::tie(o.at, o.cls, o.seq); }
};

using EventSet = std::set<Event>;

struct GuestState {
    std::size_t pc = 0;
    std::optional<Time> remaining;  // of the compute op at pc, once started
    std::optional<EventSet::iterator> compute_end;
};

std::string access_str(Access a) { return a == Access::Read ? "r" : "w"; }

std::string sanitize(std::string s) {
    for (auto& c : s) {
        if (c == ',' || c == ';' || c == '\n' || c == '\r' || c == '=') c = ' ';
    }
    return s;
}

std::vector<VcpuRecord> make_vcpus(const SystemSpec& spec) {
    std::vector<VcpuRecord> out;
    out.reserve(spec.vms.size());
    for (const auto& vm : spec.vms) out.emplace_back(vm.id, vm.sched_param);
    return out;
}

class Simulator final : public HypervisorHooks {
public:
    Simulator(const SystemSpec& spec, Time horizon, std::unique_ptr<SchedulerTable> table)
        : spec_(spec), horizon_(horizon), s2_(spec), vgic_(spec), ivc_(spec, s2_, vgic_),
          fw_(std::move(table), make_vcpus(spec), *this), guests_(spec.vms.size()) {}

    Trace execute();

    [[nodiscard]] Time now() const override { return now_; }

    void arm_timer(TimerHandle h, Time at) override {
        auto it = events_.insert(Event{at, 0, seq_++, EventKind::TimerFire, 0, h.id, 0, 0}).first;
        timer_events_[h.id] = it;
    }

    void disarm_timer(TimerHandle h) override {
        auto it = timer_events_.find(h.id);
        if (it == timer_events_.end()) return;
        events_.erase(it->second);
        timer_events_.erase(it);
    }

    void charge(CostField field, std::string_view kind, std::string detail) override {
        pause_running();
        auto cost = spec_.cost_model.get(field);
        auto left = now_ >= horizon_ ? Time{} : horizon_ - now_;
        cost = std::min(cost, left);
        trace_.push_back({now_, Actor::hypervisor(), std::string(kind), field, cost, std::move(detail)});
        now_ += cost;
    }

    void record(Actor actor, std::string_view kind, std::string detail) override {
        // Keep run/idle records contiguous: split the open interval here.
        auto reopen = interval_;
        close_interval();
        trace_.push_back({now_, actor, std::string(kind), std::nullopt, Time{}, std::move(detail)});
        if (reopen.open) open_interval(reopen.vm);
    }

private:
    struct Interval {
        bool open = false;
        std::optional<VmId> vm;  // empty: idle
        Time start;
    };

    void open_interval(std::optional<VmId> vm) {
        if (interval_.open && interval_.vm == vm) return;
        close_interval();
        interval_ = {true, vm, now_};
    }

    void close_interval() {
        if (!interval_.open) return;
        interval_.open = false;
        if (now_ <= interval_.start) return;
        auto len = now_ - interval_.start;
        auto detail = "ns=" + std::to_string(len.count());
        if (interval_.vm) {
            fw_.vcpu(*interval_.vm).consumed += len;
            trace_.push_back({interval_.start, Actor::of(*interval_.vm), std::string(rec::kRun), std::nullopt, Time{}, detail});
        } else {
            trace_.push_back({interval_.start, Actor::hypervisor(), std::string(rec::kIdle), std::nullopt, Time{}, detail});
        }
    }

    /// Stops the running guest's compute segment and the open interval.
    void pause_running() {
        close_interval();
        if (!computing_) return;
        auto& g = guests_[computing_->index];
        auto at = (*g.compute_end)->at;
        g.remaining = at > now_ ? at - now_ : Time{};
        events_.erase(*g.compute_end);
        g.compute_end.reset();
        computing_.reset();
    }

    void schedule_irq(std::size_t source, Time at, std::uint64_t occurrence) {
        events_.insert(Event{at, 0, seq_++, EventKind::PhysIrq, spec_.irq_events[source].irq, 0, source, occurrence});
    }

    void handle(const Event& e);
    void handle_phys_irq(std::uint32_t irq);
    void handle_timer_interrupt();
    void resume();
    bool step(VmId vm);
    void take_interrupts(VmId vm);
    void wake_if_sleeping(VmId vm);
    void stage2_fault(VmId vm, std::uint64_t ipa, Access access);
    void halt(VmId vm, std::string_view reason);
    std::string vm_detail(VmId vm) const { return "vm=" + to_string(vm); }

    const SystemSpec& spec_;
    Time horizon_;
    Time now_;
    Trace trace_;
    Stage2Map s2_;
    Vgic vgic_;
    IvcHub ivc_;
    SchedulingFramework fw_;
    std::vector<GuestState> guests_;
    EventSet events_;
    std::map<std::uint64_t, EventSet::iterator> timer_events_;
    std::uint64_t seq_ = 0;
    Interval interval_;
    std::optional<VmId> computing_;
};

Trace Simulator::execute() {
    trace_.push_back({Time{}, Actor::hypervisor(), std::string(rec::kConfig), std::nullopt, Time{},
                      "horizon_ns=" + std::to_string(horizon_.count()) + ";vms=" + std::to_string(spec_.vms.size()) +
                          ";scheduler=" + std::string(fw_.table().name())});
    for (std::size_t i = 0; i < spec_.irq_events.size(); ++i) {
        schedule_irq(i, spec_.irq_events[i].at, 0);
    }
    // A VM with nothing to run never becomes executable.
    for (const auto& vm : spec_.vms) {
        if (vm.workload.ops.empty()) {
            fw_.vcpu(vm.id).run_state = RunState::Blocked;
            record(Actor::of(vm.id), rec::kHalt, "reason=empty_workload");
        }
    }
    try {
        fw_.init();
        fw_.set_reschedule_flag();
        fw_.checkpoint(CheckpointKind::Boot);
        resume();
        while (!events_.empty() && events_.begin()->at <= horizon_) {
            auto e = *events_.begin();
            if (e.at > now_) now_ = e.at;
            handle(e);
        }
    } catch (const ContractViolation& e) {
        close_interval();
        trace_.push_back({now_, Actor::hypervisor(), std::string(rec::kHalt), std::nullopt, Time{},
                          "contract_violation=" + sanitize(e.what())});
        throw SimulationAborted(e.what(), std::move(trace_));
    }
    now_ = std::max(now_, horizon_);
    close_interval();
    trace_.push_back({horizon_, Actor::hypervisor(), std::string(rec::kEnd), std::nullopt, Time{}, ""});
    return std::move(trace_);
}

void Simulator::handle(const Event& e) {
    switch (e.kind) {
    case EventKind::ComputeEnd: {
        auto& g = guests_[e.target];
        events_.erase(events_.begin());
        g.compute_end.reset();
        g.remaining.reset();
        computing_.reset();
        ++g.pc;
        resume();
        break;
    }
    case EventKind::PhysIrq: {
        events_.erase(events_.begin());
        const auto& src = spec_.irq_events[e.source];
        auto next = e.occurrence + 1;
        if (src.period && (!src.count || next < *src.count)) {
            schedule_irq(e.source, e.at + *src.period, next);
        }
        handle_phys_irq(e.target);
        break;
    }
    case EventKind::TimerFire: handle_timer_interrupt(); break;
    }
}

void Simulator::handle_phys_irq(std::uint32_t irq) {
    auto irq_str = "irq=" + std::to_string(irq);
    charge(CostField::InterruptEntryExit, "irq_entry", irq_str);
    auto res = vgic_.physical_irq(irq);
    switch (res.delivery) {
    case Delivery::Dropped: record(Actor::hypervisor(), rec::kWarning, irq_str + ";unowned=1"); break;
    case Delivery::Collapsed: record(Actor::of(*res.target), rec::kCollapse, irq_str); break;
    case Delivery::Injected:
    case Delivery::Held:
        record(Actor::of(*res.target), rec::kInject,
               irq_str + ";hw=1;state=" + (res.delivery == Delivery::Injected ? "lr" : "held"));
        wake_if_sleeping(*res.target);
        break;
    }
    fw_.checkpoint(CheckpointKind::EndOfPhysicalInterrupt);
    resume();
}

void Simulator::handle_timer_interrupt() {
    charge(CostField::InterruptEntryExit, "timer_entry", "");
    // Every timer already due is served by this one interrupt.
    std::vector<TimerHandle> due;
    for (auto it = events_.begin(); it != events_.end() && it->at <= now_;) {
        if (it->kind == EventKind::TimerFire) {
            due.push_back(TimerHandle{it->handle});
            timer_events_.erase(it->handle);
            it = events_.erase(it);
        } else {
            ++it;
        }
    }
    for (auto h : due) fw_.fire_timer(h);
    fw_.checkpoint(CheckpointKind::EndOfPhysicalInterrupt);
    resume();
}

void Simulator::wake_if_sleeping(VmId vm) {
    if (fw_.vcpu(vm).run_state == RunState::Sleeping && vgic_.has_pending(vm)) {
        fw_.on_vm_wakeup(vm);
    }
}

void Simulator::take_interrupts(VmId vm) {
    for (auto irq = vgic_.ack(vm); irq != kSpuriousIrq; irq = vgic_.ack(vm)) {
        record(Actor::of(vm), rec::kAck, "irq=" + std::to_string(irq));
        vgic_.eoi(vm, irq);
        record(Actor::of(vm), rec::kEoi, "irq=" + std::to_string(irq));
    }
}

void Simulator::halt(VmId vm, std::string_view reason) {
    record(Actor::of(vm), rec::kHalt, "reason=" + std::string(reason));
    fw_.on_vm_sleep(vm, RunState::Blocked);
}

void Simulator::stage2_fault(VmId vm, std::uint64_t ipa, Access access) {
    charge(CostField::HypCall, "stage2_fault", vm_detail(vm));
    bool stop = spec_.platform.stage2_fault == FaultPolicy::Halt;
    record(Actor::of(vm), rec::kFault,
           "ipa=" + hex(ipa) + ";rw=" + access_str(access) + ";action=" + (stop ? "halt" : "inject"));
    if (stop) halt(vm, "stage2_fault");
    fw_.checkpoint(CheckpointKind::EndOfHypCall);
}

void Simulator::resume() {
    while (now_ < horizon_) {
        auto* cur = fw_.current();
        if (!cur) {
            open_interval(std::nullopt);
            return;
        }
        auto vm = cur->id();
        take_interrupts(vm);
        auto& g = guests_[vm.index];
        const auto& w = spec_.vm(vm).workload;
        if (g.pc >= w.ops.size()) {
            if (w.loop) {
                g.pc = 0;
            } else {
                charge(CostField::HypCall, "hypcall", vm_detail(vm) + ";reason=exit");
                halt(vm, "script_end");
                fw_.checkpoint(CheckpointKind::EndOfHypCall);
                continue;
            }
        }
        if (!step(vm)) return;
    }
    close_interval();
}

bool Simulator::step(VmId vm) {
    auto& g = guests_[vm.index];
    const auto& o = spec_.vm(vm).workload.ops[g.pc];
    auto ch_str = [](std::uint32_t ch) { return "channel=" + std::to_string(ch); };

    if (const auto* c = std::get_if<op::Compute>(&o)) {
        if (!g.remaining) g.remaining = c->duration;
        if (*g.remaining == Time{}) {
            g.remaining.reset();
            ++g.pc;
            return true;
        }
        open_interval(vm);
        g.compute_end = events_.insert(Event{now_ + *g.remaining, 1, seq_++, EventKind::ComputeEnd, vm.index, 0, 0, 0}).first;
        computing_ = vm;
        return false;
    }
    ++g.pc;
    if (std::holds_alternative<op::HypCall>(o)) {
        charge(CostField::HypCall, "hypcall", vm_detail(vm));
        fw_.checkpoint(CheckpointKind::EndOfHypCall);
    } else if (std::holds_alternative<op::Wfi>(o)) {
        charge(CostField::HypCall, "wfi", vm_detail(vm));
        if (!vgic_.has_pending(vm)) fw_.on_vm_sleep(vm, RunState::Sleeping);
        fw_.checkpoint(CheckpointKind::EndOfHypCall);
    } else if (const auto* m = std::get_if<op::Mmio>(&o)) {
        auto tr = s2_.translate(vm, m->ipa, m->access);
        if (const auto* pa = std::get_if<PhysicalAddress>(&tr)) {
            record(Actor::of(vm), rec::kMemAccess, "ipa=" + hex(m->ipa) + ";pa=" + hex(pa->pa) + ";rw=" + access_str(m->access));
        } else if (const auto* route = std::get_if<MmioRoute>(&tr)) {
            bool write = m->access == Access::Write;
            charge(CostField::MmioEmulation, "mmio_emulation", vm_detail(vm));
            auto r = vgic_.dist_access(vm, route->offset, write, m->value);
            if (!r.modeled && spec_.platform.unmodeled_mmio == UnmodeledMmioPolicy::Fault) {
                bool stop = spec_.platform.stage2_fault == FaultPolicy::Halt;
                record(Actor::of(vm), rec::kFault,
                       "ipa=" + hex(m->ipa) + ";rw=" + access_str(m->access) + ";unmodeled=1;action=" + (stop ? "halt" : "inject"));
                if (stop) halt(vm, "unmodeled_mmio");
            } else {
                record(Actor::of(vm), rec::kMmio,
                       "offset=" + hex(route->offset) + ";rw=" + access_str(m->access) + ";value=" +
                           hex(write ? m->value : r.value) + ";modeled=" + (r.modeled ? "1" : "0"));
            }
            fw_.checkpoint(CheckpointKind::EndOfHypCall);
        } else {
            stage2_fault(vm, m->ipa, m->access);
        }
    } else if (const auto* n = std::get_if<op::IvcNotify>(&o)) {
        auto out = ivc_.notify(n->channel, vm);
        for (auto f : out.costs) charge(f, "ivc_notify", vm_detail(vm) + ";" + ch_str(n->channel));
        auto detail = "virq=" + std::to_string(out.virq) + ";" + ch_str(n->channel) + ";from=" + to_string(vm);
        if (out.delivery.delivery == Delivery::Collapsed) {
            record(Actor::of(out.target), rec::kCollapse, detail);
        } else {
            record(Actor::of(out.target), rec::kInject, detail);
            wake_if_sleeping(out.target);
        }
        fw_.checkpoint(CheckpointKind::EndOfHypCall);
    } else if (const auto* a = std::get_if<op::IvcAcquire>(&o)) {
        if (ivc_.channel(a->channel).variant == IvcVariant::FreeAccess) return true;
        auto out = ivc_.acquire(a->channel, vm);
        for (auto f : out.costs) charge(f, "ivc_acquire", vm_detail(vm) + ";" + ch_str(a->channel));
        if (out.result == GateResult::Busy) {
            record(Actor::of(vm), rec::kIvcBusy, ch_str(a->channel) + ";holder=" + to_string(*ivc_.holder(a->channel)));
        }
        fw_.checkpoint(CheckpointKind::EndOfHypCall);
    } else if (const auto* r = std::get_if<op::IvcRelease>(&o)) {
        if (ivc_.channel(r->channel).variant == IvcVariant::FreeAccess) return true;
        if (ivc_.holder(r->channel) == vm) {
            for (auto f : ivc_.release(r->channel, vm)) charge(f, "ivc_release", vm_detail(vm) + ";" + ch_str(r->channel));
        } else {
            charge(CostField::HypCall, "ivc_release", vm_detail(vm) + ";" + ch_str(r->channel));
            record(Actor::of(vm), rec::kWarning, ch_str(r->channel) + ";not_holder=1");
        }
        fw_.checkpoint(CheckpointKind::EndOfHypCall);
    } else if (const auto* wr = std::get_if<op::IvcWrite>(&o)) {
        auto ipa = ivc_.data_ipa(wr->channel, vm);
        auto tr = s2_.translate(vm, ipa, Access::Write);
        if (const auto* pa = std::get_if<PhysicalAddress>(&tr)) {
            record(Actor::of(vm), rec::kIvcWrite,
                   ch_str(wr->channel) + ";bytes=" + std::to_string(wr->bytes) + ";pa=" + hex(pa->pa));
        } else {
            stage2_fault(vm, ipa, Access::Write);
        }
    }
    return true;
}

} // namespace

RunResult run(const SystemSpec& spec, Time horizon) { return run(spec, horizon, make_scheduler(spec)); }

RunResult run(const SystemSpec& spec, Time horizon, std::unique_ptr<SchedulerTable> table) {
    if (horizon == Time{}) {
        throw std::invalid_argument("horizon must be positive");
    }
    Simulator sim(spec, horizon, std::move(table));
    RunResult out;
    out.trace = sim.execute();
    out.metrics = compute_metrics(out.trace);
    return out;
}

} // namespace tvsim
