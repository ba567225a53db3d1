#include "tvsim/vgic.hpp"

#include <algorithm>
#include <stdexcept>

namespace tvsim {

Vgic::Vgic(const SystemSpec& spec) {
    if (spec.platform.lr_count == 0) {
        throw std::invalid_argument("a virtual CPU interface needs at least one list register");
    }
    vms_.resize(spec.vms.size());
    for (const auto& vm : spec.vms) {
        auto& vi = vms_.at(vm.id.index);
        vi.lrs.assign(spec.platform.lr_count, ListRegister{});
        vi.declared_virqs.insert(vm.virqs.begin(), vm.virqs.end());
        vi.ctlr = spec.platform.irqs_enabled_at_boot;
        for (auto irq : vm.irqs) {
            if (irq < kFirstAssignableIrq || irq >= kNumIrqs) {
                throw std::invalid_argument("IRQ " + std::to_string(irq) + " cannot be assigned");
            }
            owner_[irq] = vm.id;
            if (spec.platform.irqs_enabled_at_boot) {
                enabled_.set(irq);
            }
        }
    }
}

std::uint32_t Vgic::read_bits(VmId vm, const std::bitset<kNumIrqs>& bits, std::uint32_t word) const {
    std::uint32_t out = 0;
    for (std::uint32_t b = 0; b < 32; ++b) {
        auto irq = word * 32 + b;
        if (owned_by(irq, vm) && bits.test(irq)) {
            out |= 1u << b;
        }
    }
    return out;
}

template <typename F>
void Vgic::for_owned_bits(VmId vm, std::uint32_t word, std::uint32_t value, F&& fn) {
    for (std::uint32_t b = 0; b < 32; ++b) {
        auto irq = word * 32 + b;
        if ((value >> b) & 1u && owned_by(irq, vm)) {
            fn(irq);
        }
    }
}

MmioResult Vgic::dist_access(VmId vm, std::uint32_t offset, bool is_write, std::uint32_t value) {
    auto& vi = vms_.at(vm.index);
    if (offset % 4 != 0 || offset >= gicd::kWindowSize) {
        return {false, 0};
    }
    constexpr std::uint32_t kBitWords = kNumIrqs / 32;
    constexpr std::uint32_t kByteWords = kNumIrqs / 4;
    auto in_bank = [&](std::uint32_t base, std::uint32_t words) { return offset >= base && offset < base + words * 4; };

    if (offset == gicd::kCtlr) {
        if (!is_write) return {true, vi.ctlr ? 1u : 0u};
        vi.ctlr = value & 1u;
        drain(vm);
        return {};
    }
    if (in_bank(gicd::kIsenabler, kBitWords) || in_bank(gicd::kIcenabler, kBitWords)) {
        bool set = in_bank(gicd::kIsenabler, kBitWords);
        auto word = (offset - (set ? gicd::kIsenabler : gicd::kIcenabler)) / 4;
        if (!is_write) return {true, read_bits(vm, enabled_, word)};
        for_owned_bits(vm, word, value, [&](std::uint32_t irq) { enabled_.set(irq, set); });
        if (set) drain(vm);
        return {};
    }
    if (in_bank(gicd::kIspendr, kBitWords) || in_bank(gicd::kIcpendr, kBitWords)) {
        bool set = in_bank(gicd::kIspendr, kBitWords);
        auto word = (offset - (set ? gicd::kIspendr : gicd::kIcpendr)) / 4;
        if (!is_write) return {true, read_bits(vm, pending_, word)};
        for_owned_bits(vm, word, value, [&](std::uint32_t irq) { pending_.set(irq, set); });
        if (set) drain(vm);
        return {};
    }
    if (in_bank(gicd::kIpriorityr, kByteWords)) {
        auto first = (offset - gicd::kIpriorityr);  // one byte per interrupt
        std::uint32_t out = 0;
        for (std::uint32_t lane = 0; lane < 4; ++lane) {
            auto irq = first + lane;
            if (!owned_by(irq, vm)) continue;
            if (is_write) {
                priority_[irq] = static_cast<std::uint8_t>(value >> (8 * lane));
            } else {
                out |= static_cast<std::uint32_t>(priority_[irq]) << (8 * lane);
            }
        }
        return {true, out};
    }
    if (in_bank(gicd::kItargetsr, kByteWords)) {
        // Targets reflect the static assignment; writes are ignored.
        if (is_write) return {};
        auto first = offset - gicd::kItargetsr;
        std::uint32_t out = 0;
        for (std::uint32_t lane = 0; lane < 4; ++lane) {
            if (owned_by(first + lane, vm)) out |= 0x01u << (8 * lane);
        }
        return {true, out};
    }
    return {false, 0};
}

ListRegister* Vgic::free_lr(VmInterface& vi) {
    auto it = std::find_if(vi.lrs.begin(), vi.lrs.end(), [](const ListRegister& lr) { return lr.state == LrState::Invalid; });
    return it == vi.lrs.end() ? nullptr : &*it;
}

bool Vgic::lr_holds(const VmInterface& vi, std::uint32_t virq) const {
    return std::any_of(vi.lrs.begin(), vi.lrs.end(),
                       [virq](const ListRegister& lr) { return lr.state != LrState::Invalid && lr.virq == virq; });
}

std::uint32_t Vgic::drain(VmId vm) {
    auto& vi = vms_.at(vm.index);
    std::uint32_t moved = 0;
    while (auto* lr = free_lr(vi)) {
        struct Candidate {
            std::uint8_t priority;
            std::uint32_t id;
            bool hw;
        };
        std::optional<Candidate> best;
        auto offer = [&](Candidate c) {
            if (!best || std::pair(c.priority, c.id) < std::pair(best->priority, best->id)) best = c;
        };
        if (vi.ctlr) {
            for (std::uint32_t irq = kFirstAssignableIrq; irq < kNumIrqs; ++irq) {
                if (owned_by(irq, vm) && enabled_.test(irq) && pending_.test(irq) && !active_.test(irq) && !lr_holds(vi, irq)) {
                    offer({priority_[irq], irq, true});
                }
            }
        }
        for (auto virq : vi.held_virtual) {
            if (!lr_holds(vi, virq)) offer({kVirtualIrqPriority, virq, false});
        }
        if (!best) break;
        if (best->hw) {
            pending_.reset(best->id);
            active_.set(best->id);
            *lr = ListRegister{best->id, best->priority, LrState::Pending, best->id};
        } else {
            vi.held_virtual.erase(best->id);
            *lr = ListRegister{best->id, best->priority, LrState::Pending, std::nullopt};
        }
        ++moved;
    }
    return moved;
}

DeliveryResult Vgic::physical_irq(std::uint32_t irq) {
    if (irq >= kNumIrqs || !owner_[irq]) {
        return {Delivery::Dropped, std::nullopt};
    }
    auto vm = *owner_[irq];
    if (pending_.test(irq)) {
        return {Delivery::Collapsed, vm};
    }
    pending_.set(irq);
    drain(vm);
    const auto& lrs = vms_[vm.index].lrs;
    bool injected = !pending_.test(irq) && std::any_of(lrs.begin(), lrs.end(), [irq](const ListRegister& lr) {
        return lr.state == LrState::Pending && lr.virq == irq;
    });
    return {injected ? Delivery::Injected : Delivery::Held, vm};
}

DeliveryResult Vgic::inject_virtual(VmId vm, std::uint32_t virq) {
    auto& vi = vms_.at(vm.index);
    if (!vi.declared_virqs.count(virq)) {
        throw std::invalid_argument("virq " + std::to_string(virq) + " is not declared for " + to_string(vm));
    }
    bool pending_in_lr = std::any_of(vi.lrs.begin(), vi.lrs.end(), [virq](const ListRegister& lr) {
        return lr.state == LrState::Pending && lr.virq == virq;
    });
    if (pending_in_lr || vi.held_virtual.count(virq)) {
        return {Delivery::Collapsed, vm};
    }
    vi.held_virtual.insert(virq);
    drain(vm);
    return {vi.held_virtual.count(virq) ? Delivery::Held : Delivery::Injected, vm};
}

std::uint32_t Vgic::ack(VmId vm) {
    auto& vi = vms_.at(vm.index);
    ListRegister* best = nullptr;
    for (auto& lr : vi.lrs) {
        if (lr.state != LrState::Pending) continue;
        if (!best || std::pair(lr.priority, lr.virq) < std::pair(best->priority, best->virq)) best = &lr;
    }
    if (!best) {
        return kSpuriousIrq;
    }
    best->state = LrState::Active;
    return best->virq;
}

bool Vgic::eoi(VmId vm, std::uint32_t irq) {
    auto& vi = vms_.at(vm.index);
    auto it = std::find_if(vi.lrs.begin(), vi.lrs.end(),
                           [irq](const ListRegister& lr) { return lr.state == LrState::Active && lr.virq == irq; });
    if (it == vi.lrs.end()) {
        return false;
    }
    if (it->hw_irq) {
        active_.reset(*it->hw_irq);
    }
    *it = ListRegister{};
    drain(vm);
    return true;
}

bool Vgic::has_pending(VmId vm) const {
    const auto& lrs = vms_.at(vm.index).lrs;
    return std::any_of(lrs.begin(), lrs.end(), [](const ListRegister& lr) { return lr.state == LrState::Pending; });
}

std::uint32_t Vgic::active_lr_count(VmId vm) const {
    const auto& lrs = vms_.at(vm.index).lrs;
    return static_cast<std::uint32_t>(
        std::count_if(lrs.begin(), lrs.end(), [](const ListRegister& lr) { return lr.state == LrState::Active; }));
}

std::span<const ListRegister> Vgic::list_registers(VmId vm) const { return vms_.at(vm.index).lrs; }

} // namespace tvsim
