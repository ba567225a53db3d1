#pragma once

// Independent oracles and trace checkers shared by the unit and acceptance tests.

#include "tvsim/core.hpp"
#include "tvsim/engine.hpp"
#include "tvsim/generator.hpp"
#include "tvsim/trace.hpp"
#include "tvsim/vgic.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tvsim::testing {

// ---------------------------------------------------------------------------
// EDF at 1 us resolution

struct EdfOracleResult {
    std::vector<int> owner;  // per microsecond, -1 = idle
    std::uint64_t misses = 0;
};

/// Steps EDF one microsecond at a time. Every VM always wants the CPU.
/// At each step, deadlines that have arrived first count a miss if budget
/// is left, then advance; the earliest deadline with budget runs (ties: lowest id).
EdfOracleResult edf_oracle(const std::vector<EdfTask>& tasks, Time horizon);

/// Per-microsecond owner built from `run` records. Throws if an interval is
/// not microsecond aligned.
std::vector<int> owner_timeline_us(const Trace& trace, Time horizon);

// ---------------------------------------------------------------------------
// Whole-trace checks

/// CPU + hypervisor + idle == horizon, both from the metrics and by summing
/// the raw records.
bool time_conserved(const RunResult& r);

struct CallbackAudit {
    std::vector<std::string> violations;
    std::uint64_t callbacks = 0;  // init, allocate, enque, schedule, block, unblock, yield
    std::uint64_t switches = 0;   // dispatch records
    std::uint64_t flag_sets = 0;
    std::uint64_t checkpoints = 0;
};

/// Replays the callback records of a trace against the per-vCPU state
/// machine: allocate, enque, then selections, blocks, wakeups and yields,
/// with yield and block only from Running, unblock only from Sleeping or
/// Blocked, no schedule result that is asleep, every dispatch preceded by a
/// flag-set checkpoint and every world switch inside one.
CallbackAudit audit_callbacks(const Trace& trace, std::size_t vm_count);

// ---------------------------------------------------------------------------
// vGIC: one state machine per interrupt ID

class GicOracle {
public:
    struct Irq {
        std::optional<std::uint32_t> owner;
        bool enabled = false;
        bool pending = false;
        bool active = false;
        std::uint8_t prio = 0;
        enum class Lr { None, Pending, Active } lr = Lr::None;
    };
    struct VirtualIrq {
        bool held = false;
        Irq::Lr lr = Irq::Lr::None;
    };
    struct Vm {
        bool ctlr = false;
        std::size_t lr_cap = 4;
        std::set<std::uint32_t> declared;
        std::map<std::uint32_t, VirtualIrq> virqs;
    };

    explicit GicOracle(const SystemSpec& spec);

    MmioResult access(std::uint32_t vm, std::uint32_t offset, bool write, std::uint32_t value);
    Delivery physical(std::uint32_t irq);
    Delivery virtual_irq(std::uint32_t vm, std::uint32_t virq);
    std::uint32_t ack(std::uint32_t vm);
    bool eoi(std::uint32_t vm, std::uint32_t id);

    /// Sorted (id, priority, state, hw) tuples held in a VM's list registers.
    [[nodiscard]] std::vector<std::tuple<std::uint32_t, std::uint8_t, LrState, bool>> lrs(std::uint32_t vm) const;
    [[nodiscard]] std::set<std::uint32_t> held_virtual(std::uint32_t vm) const;

    std::vector<Irq> irqs;
    std::vector<Vm> vms;

private:
    std::size_t occupancy(std::uint32_t vm) const;
    void fill(std::uint32_t vm);

    std::map<std::uint32_t, std::uint8_t> lr_prio_;  // latched when a hw interrupt enters an LR
};

/// Sorted LR tuples of the model under test, for comparison with the oracle.
std::vector<std::tuple<std::uint32_t, std::uint8_t, LrState, bool>> lr_tuples(const Vgic& g, VmId vm);

// ---------------------------------------------------------------------------
// Config builders

/// Identity-mapped (IPA == PA) random system: 2..5 VMs with private regions,
/// IRQs, optional shared pages and channels, and random workloads that touch
/// their own memory, other VMs' memory, the distributor and shared pages.
SystemSpec random_isolation_system(std::uint64_t seed);

/// Random system for scheduler contract checks: CPU bursts, wfi, Hyp calls
/// and device interrupts that wake sleeping VMs.
SystemSpec random_contract_system(std::uint64_t seed, const std::string& scheduler);

} // namespace tvsim::testing
