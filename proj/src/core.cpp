#include "tvsim/core.hpp"

#include <algorithm>

namespace tvsim {

std::string to_string(VmId id) { return "vm" + std::to_string(id.index); }

std::string_view to_string(CostField f) {
    switch (f) {
    case CostField::HypCall: return "hyp_call";
    case CostField::WorldSwitch: return "world_switch";
    case CostField::InterruptEntryExit: return "interrupt_entry_exit";
    case CostField::VirtualInterrupt: return "virtual_interrupt";
    case CostField::TlbFlush: return "tlb_flush";
    case CostField::MmioEmulation: return "mmio_emulation";
    }
    return "?";
}

std::optional<CostField> cost_field_from_string(std::string_view s) {
    for (auto f : kAllCostFields) {
        if (to_string(f) == s) {
            return f;
        }
    }
    return std::nullopt;
}

CostModel CostModel::defaults() {
    CostModel cm;
    cm.hyp_call = Time::ns(6580);
    cm.world_switch = Time::ns(25840);
    cm.interrupt_entry_exit = Time::ns(7480);
    cm.virtual_interrupt = Time::ns(29710);
    // (h + v + 2(h + f)) / (h + v) = 10  =>  f = 9(h + v)/2 - h
    cm.tlb_flush = Time::ns(156725);
    cm.mmio_emulation = cm.hyp_call;
    return cm;
}

Time CostModel::get(CostField f) const { return const_cast<CostModel*>(this)->get(f); }

Time& CostModel::get(CostField f) {
    switch (f) {
    case CostField::HypCall: return hyp_call;
    case CostField::WorldSwitch: return world_switch;
    case CostField::InterruptEntryExit: return interrupt_entry_exit;
    case CostField::VirtualInterrupt: return virtual_interrupt;
    case CostField::TlbFlush: return tlb_flush;
    case CostField::MmioEmulation: return mmio_emulation;
    }
    throw std::invalid_argument("unknown cost field");
}

std::string to_string(Perms p) {
    std::string s;
    if (p.read) s += 'r';
    if (p.write) s += 'w';
    return s;
}

std::string_view to_string(RunState s) {
    switch (s) {
    case RunState::Running: return "running";
    case RunState::Ready: return "ready";
    case RunState::Blocked: return "blocked";
    case RunState::Sleeping: return "sleeping";
    }
    return "?";
}

std::optional<VmId> SystemSpec::irq_owner(std::uint32_t irq) const {
    for (const auto& vm : vms) {
        if (std::binary_search(vm.irqs.begin(), vm.irqs.end(), irq)) {
            return vm.id;
        }
    }
    return std::nullopt;
}

const SharedPage* SystemSpec::shared_page(std::uint32_t id) const {
    auto it = std::find_if(shared_pages.begin(), shared_pages.end(),
                           [id](const SharedPage& p) { return p.id == id; });
    return it == shared_pages.end() ? nullptr : &*it;
}

const ChannelSpec* SystemSpec::channel(std::uint32_t id) const {
    auto it = std::find_if(channels.begin(), channels.end(),
                           [id](const ChannelSpec& c) { return c.id == id; });
    return it == channels.end() ? nullptr : &*it;
}

} // namespace tvsim
