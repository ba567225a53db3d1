#include "support.hpp"

#include "tvsim/schedulers.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace tvsim::testing {

EdfOracleResult edf_oracle(const std::vector<EdfTask>& tasks, Time horizon) {
    const std::uint64_t steps = horizon.count() / 1000;
    std::vector<std::uint64_t> period, budget, deadline, left;
    for (const auto& t : tasks) {
        if (t.period.count() % 1000 || t.budget.count() % 1000) throw std::invalid_argument("oracle needs whole microseconds");
        period.push_back(t.period.count() / 1000);
        budget.push_back(t.budget.count() / 1000);
    }
    deadline = period;
    left = budget;
    EdfOracleResult out;
    out.owner.assign(steps, -1);
    for (std::uint64_t t = 0; t <= steps; ++t) {
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            while (deadline[i] <= t) {
                if (left[i] > 0) ++out.misses;
                deadline[i] += period[i];
                left[i] = budget[i];
            }
        }
        if (t == steps) break;
        int best = -1;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            if (left[i] == 0) continue;
            if (best < 0 || deadline[i] < deadline[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
        }
        out.owner[t] = best;
        if (best >= 0) --left[static_cast<std::size_t>(best)];
    }
    return out;
}

std::vector<int> owner_timeline_us(const Trace& trace, Time horizon) {
    std::vector<int> owner(horizon.count() / 1000, -1);
    for (const auto& r : trace) {
        if (r.kind != rec::kRun) continue;
        auto ns = std::stoull(*detail_value(r.detail, "ns"));
        if (r.time.count() % 1000 || ns % 1000) throw std::runtime_error("run interval not microsecond aligned");
        for (auto t = r.time.count() / 1000; t < (r.time.count() + ns) / 1000; ++t) {
            if (owner.at(t) != -1) throw std::runtime_error("overlapping run intervals");
            owner[t] = static_cast<int>(r.actor.vm->index);
        }
    }
    return owner;
}

bool time_conserved(const RunResult& r) {
    const auto& m = r.metrics;
    if (m.total_cpu_time() + m.hypervisor_overhead_time + m.idle_time != m.horizon) return false;
    Time sum;
    for (const auto& rec : r.trace) {
        sum += rec.cost;
        if (rec.kind == rec::kRun || rec.kind == rec::kIdle) sum += Time{std::stoull(*detail_value(rec.detail, "ns"))};
    }
    return sum == m.horizon;
}

CallbackAudit audit_callbacks(const Trace& trace, std::size_t vm_count) {
    enum class S { Unborn, Allocated, Ready, Running, Sleeping, Blocked };
    std::vector<S> st(vm_count, S::Unborn);
    CallbackAudit a;
    bool seen_init = false;
    bool window = false;     // inside a checkpoint that found the flag set
    bool scheduled = false;  // schedule() already ran in this window
    auto fail = [&](std::size_t i, const std::string& what) {
        a.violations.push_back("record " + std::to_string(i) + ": " + what);
    };
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& r = trace[i];
        const auto vm = r.actor.vm ? static_cast<int>(r.actor.vm->index) : -1;
        auto need = [&](std::initializer_list<S> allowed, const char* cb) {
            if (vm < 0 || std::find(allowed.begin(), allowed.end(), st[static_cast<std::size_t>(vm)]) == allowed.end()) {
                fail(i, std::string(cb) + " from illegal state");
            }
        };
        const auto& k = r.kind;
        if (k == rec::kInit) {
            ++a.callbacks;
            if (seen_init) fail(i, "init twice");
            seen_init = true;
        } else if (k == rec::kAllocate) {
            ++a.callbacks;
            need({S::Unborn}, "allocate");
            if (vm >= 0) st[static_cast<std::size_t>(vm)] = S::Allocated;
        } else if (k == rec::kEnque) {
            ++a.callbacks;
            need({S::Allocated}, "enque");
            if (vm >= 0) st[static_cast<std::size_t>(vm)] = S::Ready;
        } else if (k == rec::kCheckpoint) {
            ++a.checkpoints;
            window = detail_value(r.detail, "flag") == "1";
            scheduled = false;
        } else if (k == rec::kSchedule) {
            ++a.callbacks;
            if (!window) fail(i, "schedule outside a flagged checkpoint");
            scheduled = true;
            auto ret = *detail_value(r.detail, "ret");
            if (ret != "none") {
                auto id = std::stoul(ret.substr(2));
                if (id >= vm_count) {
                    fail(i, "schedule returned an unknown VM");
                } else if (st[id] != S::Ready && st[id] != S::Running) {
                    fail(i, "schedule returned a VM that is not executable");
                }
            }
        } else if (k == rec::kBlock) {
            ++a.callbacks;
            if (!scheduled) fail(i, "block outside dispatch");
            need({S::Running}, "block");
            if (vm >= 0) st[static_cast<std::size_t>(vm)] = S::Ready;
        } else if (k == rec::kYield) {
            ++a.callbacks;
            need({S::Running}, "yield");
            if (vm >= 0) {
                st[static_cast<std::size_t>(vm)] = detail_value(r.detail, "into") == "blocked" ? S::Blocked : S::Sleeping;
            }
        } else if (k == rec::kUnblock) {
            ++a.callbacks;
            need({S::Sleeping, S::Blocked}, "unblock");
            if (vm >= 0) st[static_cast<std::size_t>(vm)] = S::Ready;
        } else if (k == rec::kDispatch) {
            ++a.switches;
            if (!scheduled) fail(i, "dispatch without schedule");
            need({S::Ready}, "dispatch");
            if (std::count(st.begin(), st.end(), S::Running) != 0) fail(i, "two VMs running");
            if (vm >= 0) st[static_cast<std::size_t>(vm)] = S::Running;
            window = scheduled = false;
        } else if (k == rec::kFlagSet) {
            ++a.flag_sets;
        } else if (r.cost_field == CostField::WorldSwitch) {
            if (!scheduled) fail(i, "world switch outside a flagged checkpoint");
        }
    }
    if (a.switches > a.flag_sets) a.violations.push_back("more context switches than flag sets");
    return a;
}

// ---------------------------------------------------------------------------

GicOracle::GicOracle(const SystemSpec& spec) : irqs(kNumIrqs), vms(spec.vms.size()) {
    for (const auto& vm : spec.vms) {
        auto& v = vms[vm.id.index];
        v.ctlr = spec.platform.irqs_enabled_at_boot;
        v.lr_cap = spec.platform.lr_count;
        v.declared.insert(vm.virqs.begin(), vm.virqs.end());
        for (auto irq : vm.irqs) {
            irqs[irq].owner = vm.id.index;
            irqs[irq].enabled = spec.platform.irqs_enabled_at_boot;
        }
    }
}

std::size_t GicOracle::occupancy(std::uint32_t vm) const {
    std::size_t n = 0;
    for (const auto& q : irqs) n += q.owner == vm && q.lr != Irq::Lr::None;
    for (const auto& [_, v] : vms[vm].virqs) n += v.lr != Irq::Lr::None;
    return n;
}

void GicOracle::fill(std::uint32_t vm) {
    auto& v = vms[vm];
    while (occupancy(vm) < v.lr_cap) {
        std::optional<std::tuple<std::uint8_t, std::uint32_t, bool>> best;
        for (std::uint32_t id = 0; id < kNumIrqs; ++id) {
            const auto& q = irqs[id];
            if (q.owner == vm && v.ctlr && q.enabled && q.pending && !q.active && q.lr == Irq::Lr::None) {
                std::tuple<std::uint8_t, std::uint32_t, bool> c{q.prio, id, true};
                if (!best || c < *best) best = c;
            }
        }
        for (const auto& [id, x] : v.virqs) {
            if (x.held && x.lr == Irq::Lr::None) {
                std::tuple<std::uint8_t, std::uint32_t, bool> c{kVirtualIrqPriority, id, false};
                if (!best || c < *best) best = c;
            }
        }
        if (!best) return;
        auto [prio, id, hw] = *best;
        if (hw) {
            auto& q = irqs[id];
            q.pending = false;
            q.active = true;
            q.lr = Irq::Lr::Pending;
            lr_prio_[id] = prio;
        } else {
            auto& x = v.virqs[id];
            x.held = false;
            x.lr = Irq::Lr::Pending;
        }
    }
}

MmioResult GicOracle::access(std::uint32_t vm, std::uint32_t offset, bool write, std::uint32_t value) {
    auto done = [&](MmioResult r) {
        for (std::uint32_t i = 0; i < vms.size(); ++i) fill(i);
        return r;
    };
    if (offset % 4 != 0 || offset >= gicd::kWindowSize) return {false, 0};
    if (offset == gicd::kCtlr) {
        if (!write) return {true, vms[vm].ctlr ? 1u : 0u};
        vms[vm].ctlr = value & 1u;
        return done({true, 0});
    }
    struct BitBank {
        std::uint32_t base;
        bool Irq::*field;
        bool set;
    };
    const BitBank banks[] = {{gicd::kIsenabler, &Irq::enabled, true},
                             {gicd::kIcenabler, &Irq::enabled, false},
                             {gicd::kIspendr, &Irq::pending, true},
                             {gicd::kIcpendr, &Irq::pending, false}};
    for (const auto& b : banks) {
        if (offset < b.base || offset >= b.base + kNumIrqs / 8) continue;
        std::uint32_t out = 0;
        for (std::uint32_t irq = 0; irq < kNumIrqs; ++irq) {
            if (irq / 32 != (offset - b.base) / 4 || irqs[irq].owner != vm) continue;
            auto bit = irq % 32;
            if (write) {
                if ((value >> bit) & 1u) irqs[irq].*b.field = b.set;
            } else if (irqs[irq].*b.field) {
                out |= 1u << bit;
            }
        }
        return write ? done({true, 0}) : MmioResult{true, out};
    }
    if (offset >= gicd::kIpriorityr && offset < gicd::kIpriorityr + kNumIrqs) {
        std::uint32_t out = 0;
        for (std::uint32_t lane = 0; lane < 4; ++lane) {
            auto irq = offset - gicd::kIpriorityr + lane;
            if (irqs[irq].owner != vm) continue;
            if (write) irqs[irq].prio = static_cast<std::uint8_t>((value >> (8 * lane)) & 0xFF);
            else out |= static_cast<std::uint32_t>(irqs[irq].prio) << (8 * lane);
        }
        return write ? done({true, 0}) : MmioResult{true, out};
    }
    if (offset >= gicd::kItargetsr && offset < gicd::kItargetsr + kNumIrqs) {
        if (write) return {true, 0};
        std::uint32_t out = 0;
        for (std::uint32_t lane = 0; lane < 4; ++lane) {
            if (irqs[offset - gicd::kItargetsr + lane].owner == vm) out |= 1u << (8 * lane);
        }
        return {true, out};
    }
    return {false, 0};
}

Delivery GicOracle::physical(std::uint32_t irq) {
    if (irq >= kNumIrqs || !irqs[irq].owner) return Delivery::Dropped;
    auto& q = irqs[irq];
    if (q.pending) return Delivery::Collapsed;
    q.pending = true;
    fill(*q.owner);
    return (q.lr == Irq::Lr::Pending && !q.pending) ? Delivery::Injected : Delivery::Held;
}

Delivery GicOracle::virtual_irq(std::uint32_t vm, std::uint32_t virq) {
    auto& v = vms[vm];
    if (!v.declared.count(virq)) throw std::invalid_argument("undeclared virq");
    auto& x = v.virqs[virq];
    if (x.held || x.lr == Irq::Lr::Pending) return Delivery::Collapsed;
    x.held = true;
    fill(vm);
    return x.held ? Delivery::Held : Delivery::Injected;
}

std::uint32_t GicOracle::ack(std::uint32_t vm) {
    std::optional<std::pair<std::uint8_t, std::uint32_t>> best;
    bool best_hw = false;
    for (std::uint32_t id = 0; id < kNumIrqs; ++id) {
        if (irqs[id].owner == vm && irqs[id].lr == Irq::Lr::Pending) {
            std::pair<std::uint8_t, std::uint32_t> c{lr_prio_[id], id};
            if (!best || c < *best) best = c, best_hw = true;
        }
    }
    for (const auto& [id, x] : vms[vm].virqs) {
        if (x.lr == Irq::Lr::Pending) {
            std::pair<std::uint8_t, std::uint32_t> c{kVirtualIrqPriority, id};
            if (!best || c < *best) best = c, best_hw = false;
        }
    }
    if (!best) return kSpuriousIrq;
    if (best_hw) irqs[best->second].lr = Irq::Lr::Active;
    else vms[vm].virqs[best->second].lr = Irq::Lr::Active;
    return best->second;
}

bool GicOracle::eoi(std::uint32_t vm, std::uint32_t id) {
    if (id < kNumIrqs && irqs[id].owner == vm && irqs[id].lr == Irq::Lr::Active) {
        irqs[id].lr = Irq::Lr::None;
        irqs[id].active = false;
        fill(vm);
        return true;
    }
    auto it = vms[vm].virqs.find(id);
    if (it != vms[vm].virqs.end() && it->second.lr == Irq::Lr::Active) {
        it->second.lr = Irq::Lr::None;
        fill(vm);
        return true;
    }
    return false;
}

std::vector<std::tuple<std::uint32_t, std::uint8_t, LrState, bool>> GicOracle::lrs(std::uint32_t vm) const {
    std::vector<std::tuple<std::uint32_t, std::uint8_t, LrState, bool>> out;
    auto conv = [](Irq::Lr l) { return l == Irq::Lr::Pending ? LrState::Pending : LrState::Active; };
    for (std::uint32_t id = 0; id < kNumIrqs; ++id) {
        if (irqs[id].owner == vm && irqs[id].lr != Irq::Lr::None) out.emplace_back(id, lr_prio_.at(id), conv(irqs[id].lr), true);
    }
    for (const auto& [id, x] : vms[vm].virqs) {
        if (x.lr != Irq::Lr::None) out.emplace_back(id, kVirtualIrqPriority, conv(x.lr), false);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::set<std::uint32_t> GicOracle::held_virtual(std::uint32_t vm) const {
    std::set<std::uint32_t> out;
    for (const auto& [id, x] : vms[vm].virqs) {
        if (x.held) out.insert(id);
    }
    return out;
}

std::vector<std::tuple<std::uint32_t, std::uint8_t, LrState, bool>> lr_tuples(const Vgic& g, VmId vm) {
    std::vector<std::tuple<std::uint32_t, std::uint8_t, LrState, bool>> out;
    for (const auto& lr : g.list_registers(vm)) {
        if (lr.state != LrState::Invalid) out.emplace_back(lr.virq, lr.priority, lr.state, lr.hw_irq.has_value());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------

SystemSpec random_isolation_system(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](std::uint64_t lo, std::uint64_t hi) { return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng); };
    SystemSpec spec;
    spec.scheduler.name = "rr";
    spec.scheduler.quantum = Time::us(uni(100, 2000));
    const auto n = uni(2, 5);

    // Disjoint 1 MB slots, shuffled, each holding one or two regions.
    std::vector<std::uint64_t> slots(12);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = 0x40000000 + i * 0x100000;
    std::shuffle(slots.begin(), slots.end(), rng);
    std::vector<std::uint32_t> irq_pool;
    for (std::uint32_t i = 32; i < 128; ++i) irq_pool.push_back(i);
    std::shuffle(irq_pool.begin(), irq_pool.end(), rng);

    std::size_t slot = 0, irq_at = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        VmSpec vm;
        vm.id = VmId{i};
        auto regions = uni(1, 2);
        for (std::uint64_t r = 0; r < regions; ++r) {
            auto base = slots[slot++];
            vm.regions.push_back(MemRegion{base, base, uni(1, 64) * kPageSize, {true, uni(0, 3) != 0}});
        }
        for (auto k = uni(1, 3); k > 0; --k) vm.irqs.push_back(irq_pool[irq_at++]);
        std::sort(vm.irqs.begin(), vm.irqs.end());
        spec.vms.push_back(std::move(vm));
    }
    if (uni(0, 2) != 0) {
        spec.shared_pages.push_back(SharedPage{0, 0x90000000});
        for (std::uint32_t side = 0; side < 2; ++side) {
            spec.vms[side].shared.push_back(SharedMapping{0, 0x90000000, {true, true}});
            spec.vms[side].virqs.push_back(200 + side);
        }
        spec.channels.push_back(ChannelSpec{0, {VmId{0}, VmId{1}}, {0}, {200, 201},
                                            uni(0, 1) ? IvcVariant::HypcallGated : IvcVariant::FreeAccess});
    }

    std::vector<std::uint64_t> all_addresses;
    for (const auto& vm : spec.vms) {
        for (const auto& r : vm.regions) {
            all_addresses.push_back(r.ipa_base + uni(0, r.length / 4 - 1) * 4);
            all_addresses.push_back(r.ipa_end() - 4);
        }
        all_addresses.push_back(vm.regions.front().ipa_end());  // just past a region: unmapped
    }
    all_addresses.push_back(0x90000000 + uni(0, 1023) * 4);

    for (auto& vm : spec.vms) {
        auto& ops = vm.workload.ops;
        vm.workload.loop = true;
        for (auto k = uni(4, 12); k > 0; --k) {
            switch (uni(0, 5)) {
            case 0:
                ops.push_back(op::Compute{Time::us(uni(10, 300))});
                break;
            case 1:
            case 2:
                ops.push_back(op::Mmio{all_addresses[uni(0, all_addresses.size() - 1)], uni(0, 1) ? Access::Write : Access::Read,
                                       static_cast<std::uint32_t>(uni(0, 0xFFFFFFFF))});
                break;
            case 3: {
                static constexpr std::uint32_t regs[] = {gicd::kCtlr, gicd::kIsenabler, gicd::kIcenabler + 4, gicd::kIspendr + 4,
                                                         gicd::kIcpendr, gicd::kIpriorityr + 32, gicd::kItargetsr + 40};
                ops.push_back(op::Mmio{spec.platform.gicd_base + regs[uni(0, 6)], Access::Write,
                                       static_cast<std::uint32_t>(uni(0, 0xFFFFFFFF))});
                break;
            }
            case 4:
                ops.push_back(op::HypCall{});
                break;
            default:
                if (!spec.channels.empty() && vm.id.index < 2) {
                    ops.push_back(op::IvcAcquire{0});
                    ops.push_back(op::IvcWrite{0, uni(1, 4096)});
                    ops.push_back(op::IvcRelease{0});
                    ops.push_back(op::IvcNotify{0});
                } else {
                    ops.push_back(op::Wfi{});
                }
            }
        }
        ops.push_back(op::Compute{Time::us(uni(10, 300))});
        for (auto irq : vm.irqs) {
            spec.irq_events.push_back(IrqEventSpec{irq, Time::us(uni(1, 3000)), Time::us(uni(200, 5000)), std::nullopt});
        }
    }
    return spec;
}

SystemSpec random_contract_system(std::uint64_t seed, const std::string& scheduler) {
    std::mt19937_64 rng(seed);
    auto uni = [&](std::uint64_t lo, std::uint64_t hi) { return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng); };
    SystemSpec spec;
    spec.scheduler.name = scheduler;
    const auto n = uni(2, 5);
    std::vector<EdfTask> tasks;
    if (scheduler == "edf") {
        EdfSetOptions opt;
        opt.min_vms = opt.max_vms = n;
        opt.min_util = 0.3;
        opt.max_util = 1.3;
        tasks = random_edf_set(rng, opt);
    } else if (scheduler == "rr") {
        spec.scheduler.quantum = Time::us(uni(50, 2000));
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        VmSpec vm;
        vm.id = VmId{i};
        vm.regions.push_back(MemRegion{0x40000000, 0x40000000 + 0x100000ull * i, 0x100000, {true, true}});
        auto irq = 32 + i;
        vm.irqs.push_back(irq);
        if (scheduler == "edf") vm.sched_param = to_json(EdfParam{tasks[i].period, tasks[i].budget});
        if (scheduler == "fp") vm.sched_param = {{"priority", static_cast<std::int64_t>(uni(0, 4)) - 2}};
        auto& ops = vm.workload.ops;
        for (auto k = uni(1, 6); k > 0; --k) {
            switch (uni(0, 3)) {
            case 0: ops.push_back(op::HypCall{}); break;
            case 1: ops.push_back(op::Wfi{}); break;
            default: ops.push_back(op::Compute{Time::us(uni(20, 3000))});
            }
        }
        ops.push_back(op::Compute{Time::us(uni(20, 3000))});
        vm.workload.loop = uni(0, 7) != 0;
        spec.irq_events.push_back(IrqEventSpec{irq, Time::us(uni(0, 2000)), Time::us(uni(100, 4000)), std::nullopt});
        spec.vms.push_back(std::move(vm));
    }
    return spec;
}

} // namespace tvsim::testing
