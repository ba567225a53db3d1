#pragma once

#include <nlohmann/json.hpp>

#include <any>
#include <array>
#include <compare>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tvsim {

/// Virtual time in integer nanoseconds. Arithmetic is overflow-checked.
class Time {
public:
    constexpr Time() = default;
    constexpr explicit Time(std::uint64_t ns) : ns_(ns) {}

    static constexpr Time ns(std::uint64_t v) { return Time{v}; }
    static constexpr Time us(std::uint64_t v) { return Time{v * 1000}; }
    static constexpr Time ms(std::uint64_t v) { return Time{v * 1000 * 1000}; }
    static constexpr Time max() { return Time{std::numeric_limits<std::uint64_t>::max()}; }

    [[nodiscard]] constexpr std::uint64_t count() const noexcept { return ns_; }

    constexpr auto operator<=>(const Time&) const = default;

    constexpr Time operator+(Time o) const {
        if (ns_ > std::numeric_limits<std::uint64_t>::max() - o.ns_) {
            throw std::overflow_error("virtual time overflow");
        }
        return Time{ns_ + o.ns_};
    }
    constexpr Time operator-(Time o) const {
        if (o.ns_ > ns_) {
            throw std::underflow_error("virtual time underflow");
        }
        return Time{ns_ - o.ns_};
    }
    constexpr Time operator*(std::uint64_t k) const {
        if (k != 0 && ns_ > std::numeric_limits<std::uint64_t>::max() / k) {
            throw std::overflow_error("virtual time overflow");
        }
        return Time{ns_ * k};
    }
    constexpr Time& operator+=(Time o) { return *this = *this + o; }
    constexpr Time& operator-=(Time o) { return *this = *this - o; }

private:
    std::uint64_t ns_ = 0;
};

/// Dense VM index, fixed at configuration load.
struct VmId {
    std::uint32_t index = 0;
    constexpr auto operator<=>(const VmId&) const = default;
};

std::string to_string(VmId id);

// ---------------------------------------------------------------------------
// Cost model

enum class CostField : std::uint8_t {
    HypCall,
    WorldSwitch,
    InterruptEntryExit,
    VirtualInterrupt,
    TlbFlush,
    MmioEmulation,
};

inline constexpr std::array<CostField, 6> kAllCostFields = {
    CostField::HypCall,          CostField::WorldSwitch, CostField::InterruptEntryExit,
    CostField::VirtualInterrupt, CostField::TlbFlush,    CostField::MmioEmulation,
};

std::string_view to_string(CostField f);
std::optional<CostField> cost_field_from_string(std::string_view s);

/// Hypervisor latencies charged on each Hyp-mode path.
struct CostModel {
    Time hyp_call;
    Time world_switch;
    Time interrupt_entry_exit;
    Time virtual_interrupt;
    Time tlb_flush;
    Time mmio_emulation;

    /// Default latencies; tlb_flush is the calibrated value for a
    /// 10x gated/free transfer ratio, mmio_emulation equals a Hyp call round trip.
    static CostModel defaults();
    static CostModel zero() { return {}; }

    [[nodiscard]] Time get(CostField f) const;
    Time& get(CostField f);

    bool operator==(const CostModel&) const = default;
};

// ---------------------------------------------------------------------------
// Static configuration

inline constexpr std::uint64_t kPageSize = 4096;

struct Perms {
    bool read = false;
    bool write = false;
    bool operator==(const Perms&) const = default;
};

std::string to_string(Perms p);

enum class Access : std::uint8_t { Read, Write };

struct MemRegion {
    std::uint64_t ipa_base = 0;
    std::uint64_t pa_base = 0;
    std::uint64_t length = 0;
    Perms perms{true, true};

    [[nodiscard]] std::uint64_t ipa_end() const { return ipa_base + length; }
    [[nodiscard]] std::uint64_t pa_end() const { return pa_base + length; }
    bool operator==(const MemRegion&) const = default;
};

/// A VM's declared mapping of a shared page into its IPA space.
struct SharedMapping {
    std::uint32_t page = 0;
    std::uint64_t ipa = 0;
    Perms perms{true, true};
    bool operator==(const SharedMapping&) const = default;
};

struct SharedPage {
    std::uint32_t id = 0;
    std::uint64_t pa = 0;
    bool operator==(const SharedPage&) const = default;
};

namespace op {
struct Compute {
    Time duration;
    bool operator==(const Compute&) const = default;
};
struct HypCall {
    bool operator==(const HypCall&) const = default;
};
struct Wfi {
    bool operator==(const Wfi&) const = default;
};
struct Mmio {
    std::uint64_t ipa = 0;
    Access access = Access::Read;
    std::uint32_t value = 0;
    bool operator==(const Mmio&) const = default;
};
struct IvcNotify {
    std::uint32_t channel = 0;
    bool operator==(const IvcNotify&) const = default;
};
struct IvcAcquire {
    std::uint32_t channel = 0;
    bool operator==(const IvcAcquire&) const = default;
};
struct IvcRelease {
    std::uint32_t channel = 0;
    bool operator==(const IvcRelease&) const = default;
};
struct IvcWrite {
    std::uint32_t channel = 0;
    std::uint64_t bytes = 0;
    bool operator==(const IvcWrite&) const = default;
};
} // namespace op

using WorkloadOp = std::variant<op::Compute, op::HypCall, op::Wfi, op::Mmio, op::IvcNotify,
                                op::IvcAcquire, op::IvcRelease, op::IvcWrite>;

/// Deterministic guest script. A non-looping script that runs out halts the VM.
struct Workload {
    std::vector<WorkloadOp> ops;
    bool loop = false;
    bool operator==(const Workload&) const = default;
};

struct VmSpec {
    VmId id;
    std::vector<MemRegion> regions;
    std::vector<SharedMapping> shared;
    std::vector<std::uint32_t> irqs;   // physical interrupt IDs, sorted
    std::vector<std::uint32_t> virqs;  // software virtual interrupt IDs, sorted
    nlohmann::json sched_param;        // opaque, interpreted by the scheduler
    Workload workload;
    bool operator==(const VmSpec&) const = default;
};

enum class IvcVariant : std::uint8_t { FreeAccess, HypcallGated };

struct ChannelSpec {
    std::uint32_t id = 0;
    std::array<VmId, 2> endpoints{};
    std::vector<std::uint32_t> pages;
    /// virqs[i] is the interrupt delivered to endpoints[i] when the peer notifies.
    std::array<std::uint32_t, 2> virqs{};
    IvcVariant variant = IvcVariant::FreeAccess;
    bool operator==(const ChannelSpec&) const = default;
};

/// Physical interrupt arrivals from devices outside the VMs.
struct IrqEventSpec {
    std::uint32_t irq = 0;
    Time at;
    std::optional<Time> period;
    std::optional<std::uint64_t> count;
    bool operator==(const IrqEventSpec&) const = default;
};

enum class FaultPolicy : std::uint8_t { Inject, Halt };
enum class UnmodeledMmioPolicy : std::uint8_t { Fault, Ignore };

struct PlatformSpec {
    std::uint32_t lr_count = 4;
    std::uint64_t gicd_base = 0x01C81000;
    FaultPolicy stage2_fault = FaultPolicy::Inject;
    UnmodeledMmioPolicy unmodeled_mmio = UnmodeledMmioPolicy::Fault;
    bool irqs_enabled_at_boot = true;
    bool operator==(const PlatformSpec&) const = default;
};

struct SchedulerSpec {
    std::string name = "edf";
    std::optional<Time> quantum;
    bool operator==(const SchedulerSpec&) const = default;
};

struct SystemSpec {
    CostModel cost_model = CostModel::defaults();
    SchedulerSpec scheduler;
    std::vector<VmSpec> vms;
    std::vector<SharedPage> shared_pages;
    std::vector<ChannelSpec> channels;
    std::vector<IrqEventSpec> irq_events;
    PlatformSpec platform;

    [[nodiscard]] const VmSpec& vm(VmId id) const { return vms.at(id.index); }
    [[nodiscard]] std::optional<VmId> irq_owner(std::uint32_t irq) const;
    [[nodiscard]] const SharedPage* shared_page(std::uint32_t id) const;
    [[nodiscard]] const ChannelSpec* channel(std::uint32_t id) const;
    bool operator==(const SystemSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Runtime control block

enum class RunState : std::uint8_t { Running, Ready, Blocked, Sleeping };

std::string_view to_string(RunState s);

/// Per-VM control block. The scheduling fields are opaque to the hypervisor:
/// only scheduler-table callbacks interpret them.
class VcpuRecord {
public:
    VcpuRecord(VmId id, nlohmann::json sched_param)
        : id_(id), sched_param_(std::move(sched_param)) {}

    [[nodiscard]] VmId id() const noexcept { return id_; }
    [[nodiscard]] const nlohmann::json& sched_param() const noexcept { return sched_param_; }

    RunState run_state = RunState::Ready;
    std::any sched_state;
    /// CPU time consumed since the vCPU was last dispatched.
    Time consumed;

private:
    VmId id_;
    nlohmann::json sched_param_;
};

// ---------------------------------------------------------------------------
// Errors

/// Invalid configuration; `where` names the offending field path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string where, const std::string& what)
        : std::runtime_error(where.empty() ? what : where + ": " + what), where_(std::move(where)) {}
    [[nodiscard]] const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

/// A scheduler or caller broke the scheduling-framework contract.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace tvsim
