#pragma once

#include "tvsim/core.hpp"

#include <array>
#include <bitset>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace tvsim {

inline constexpr std::uint32_t kNumIrqs = 128;
inline constexpr std::uint32_t kFirstAssignableIrq = 16;  // 0..15 are SGIs
inline constexpr std::uint32_t kSpuriousIrq = 1023;
inline constexpr std::uint8_t kVirtualIrqPriority = 0xA0;

/// Distributor register offsets (GICv2 map, modeled subset).
namespace gicd {
inline constexpr std::uint32_t kCtlr = 0x000;
inline constexpr std::uint32_t kIsenabler = 0x100;
inline constexpr std::uint32_t kIcenabler = 0x180;
inline constexpr std::uint32_t kIspendr = 0x200;
inline constexpr std::uint32_t kIcpendr = 0x280;
inline constexpr std::uint32_t kIpriorityr = 0x400;
inline constexpr std::uint32_t kItargetsr = 0x800;
inline constexpr std::uint32_t kWindowSize = 0x1000;
} // namespace gicd

enum class LrState : std::uint8_t { Invalid, Pending, Active };

struct ListRegister {
    std::uint32_t virq = 0;
    std::uint8_t priority = 0;
    LrState state = LrState::Invalid;
    std::optional<std::uint32_t> hw_irq;
    bool operator==(const ListRegister&) const = default;
};

struct MmioResult {
    /// False when the offset is outside the modeled register map.
    bool modeled = true;
    std::uint32_t value = 0;
};

enum class Delivery : std::uint8_t {
    Injected,   // placed in a list register
    Held,       // pending in the distributor (disabled, active, or no free LR)
    Collapsed,  // already pending for the target; no new delivery
    Dropped,    // no VM owns the interrupt
};

struct DeliveryResult {
    Delivery delivery = Delivery::Dropped;
    std::optional<VmId> target;
};

/// Trap-and-emulate Distributor plus one virtual CPU interface per VM.
///
/// Interrupt ownership is fixed by the configuration. Each VM sees and
/// changes only the interrupts assigned to it: other interrupts read as zero
/// and writes to them are ignored. The enable bit of CTLR is kept per VM.
///
/// A physical interrupt that is enabled, pending and inactive moves into a
/// free list register of its owner as {pending, hw_link}; the distributor
/// marks it active until the guest's EOI deactivates it. Interrupts that do
/// not fit are held and drained in (priority, id) order whenever a list
/// register frees or an interrupt becomes eligible.
class Vgic {
public:
    Vgic(const SystemSpec& spec);

    /// 32-bit distributor access by `vm` at `offset` within the window.
    MmioResult dist_access(VmId vm, std::uint32_t offset, bool is_write, std::uint32_t value);

    /// A device raised `irq`.
    DeliveryResult physical_irq(std::uint32_t irq);

    /// Guest reads the acknowledge register: returns the most urgent pending
    /// LR (ties: lowest id) and marks it active, or kSpuriousIrq.
    std::uint32_t ack(VmId vm);

    /// Guest end-of-interrupt. Returns false (and changes nothing) if `irq`
    /// is not active in one of the VM's list registers.
    bool eoi(VmId vm, std::uint32_t irq);

    /// Hypervisor-originated virtual interrupt (no hw link). Throws
    /// std::invalid_argument if `virq` is not declared for `vm`.
    DeliveryResult inject_virtual(VmId vm, std::uint32_t virq);

    [[nodiscard]] bool has_pending(VmId vm) const;
    [[nodiscard]] std::uint32_t active_lr_count(VmId vm) const;
    [[nodiscard]] std::span<const ListRegister> list_registers(VmId vm) const;
    [[nodiscard]] const std::set<std::uint32_t>& held_virtual(VmId vm) const { return vms_.at(vm.index).held_virtual; }

    [[nodiscard]] bool enabled(std::uint32_t irq) const { return enabled_.test(irq); }
    [[nodiscard]] bool pending(std::uint32_t irq) const { return pending_.test(irq); }
    [[nodiscard]] bool active(std::uint32_t irq) const { return active_.test(irq); }
    [[nodiscard]] std::uint8_t priority(std::uint32_t irq) const { return priority_.at(irq); }
    [[nodiscard]] std::optional<VmId> owner(std::uint32_t irq) const { return owner_.at(irq); }
    [[nodiscard]] bool ctlr_enabled(VmId vm) const { return vms_.at(vm.index).ctlr; }
    [[nodiscard]] std::size_t vm_count() const { return vms_.size(); }

private:
    struct VmInterface {
        bool ctlr = false;
        std::vector<ListRegister> lrs;
        std::set<std::uint32_t> declared_virqs;
        std::set<std::uint32_t> held_virtual;
    };

    [[nodiscard]] bool owned_by(std::uint32_t irq, VmId vm) const { return owner_[irq] == vm; }
    std::uint32_t read_bits(VmId vm, const std::bitset<kNumIrqs>& bits, std::uint32_t word) const;
    /// Applies `fn(irq)` to every owned interrupt whose bit is set in `value`.
    template <typename F>
    void for_owned_bits(VmId vm, std::uint32_t word, std::uint32_t value, F&& fn);
    ListRegister* free_lr(VmInterface& vi);
    [[nodiscard]] bool lr_holds(const VmInterface& vi, std::uint32_t virq) const;
    /// Moves eligible held interrupts into free LRs; returns how many.
    std::uint32_t drain(VmId vm);

    std::bitset<kNumIrqs> enabled_;
    std::bitset<kNumIrqs> pending_;
    std::bitset<kNumIrqs> active_;
    std::array<std::uint8_t, kNumIrqs> priority_{};
    std::array<std::optional<VmId>, kNumIrqs> owner_{};
    std::vector<VmInterface> vms_;
};

} // namespace tvsim
