#include "tvsim/ivc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tvsim {

IvcHub::IvcHub(const SystemSpec& spec, Stage2Map& s2, Vgic& vgic) : spec_(spec), s2_(s2), vgic_(vgic) {}

const ChannelSpec& IvcHub::channel(std::uint32_t id) const {
    const auto* ch = spec_.channel(id);
    if (!ch) {
        throw std::invalid_argument("unknown IVC channel " + std::to_string(id));
    }
    return *ch;
}

const ChannelSpec& IvcHub::endpoint_channel(std::uint32_t id, VmId vm) const {
    const auto& ch = channel(id);
    if (ch.endpoints[0] != vm && ch.endpoints[1] != vm) {
        throw std::invalid_argument(to_string(vm) + " is not an endpoint of channel " + std::to_string(id));
    }
    return ch;
}

const ChannelSpec& IvcHub::gated_channel(std::uint32_t id, VmId vm) const {
    const auto& ch = endpoint_channel(id, vm);
    if (ch.variant != IvcVariant::HypcallGated) {
        throw std::invalid_argument("channel " + std::to_string(id) + " has no gate");
    }
    return ch;
}

NotifyOutcome IvcHub::notify(std::uint32_t id, VmId from) {
    const auto& ch = endpoint_channel(id, from);
    std::size_t peer = ch.endpoints[0] == from ? 1 : 0;
    NotifyOutcome out;
    out.target = ch.endpoints[peer];
    out.virq = ch.virqs[peer];
    out.costs = {CostField::HypCall, CostField::VirtualInterrupt};
    out.delivery = vgic_.inject_virtual(out.target, out.virq);
    return out;
}

AcquireOutcome IvcHub::acquire(std::uint32_t id, VmId vm) {
    const auto& ch = gated_channel(id, vm);
    if (held_.count(id)) {
        return {GateResult::Busy, {CostField::HypCall}};
    }
    const auto& decl = spec_.vm(vm).shared;
    for (auto page : ch.pages) {
        auto m = std::find_if(decl.begin(), decl.end(), [page](const SharedMapping& s) { return s.page == page; });
        if (m == decl.end()) {
            throw std::invalid_argument(to_string(vm) + " does not declare page " + std::to_string(page));
        }
        s2_.map_shared_page(vm, m->ipa, page, m->perms, MapMode::Boot);
    }
    held_[id] = vm;
    return {GateResult::Acquired, {CostField::HypCall, CostField::TlbFlush}};
}

std::vector<CostField> IvcHub::release(std::uint32_t id, VmId vm) {
    const auto& ch = gated_channel(id, vm);
    auto it = held_.find(id);
    if (it == held_.end() || it->second != vm) {
        throw std::invalid_argument("release of channel " + std::to_string(id) + " by " + to_string(vm) +
                                    ", which does not hold it");
    }
    for (auto page : ch.pages) {
        s2_.unmap_shared_page(vm, page, MapMode::Boot);
    }
    held_.erase(it);
    return {CostField::HypCall, CostField::TlbFlush};
}

std::optional<VmId> IvcHub::holder(std::uint32_t id) const {
    auto it = held_.find(id);
    if (it == held_.end()) return std::nullopt;
    return it->second;
}

std::uint64_t IvcHub::data_ipa(std::uint32_t id, VmId vm) const {
    const auto& ch = endpoint_channel(id, vm);
    if (ch.pages.empty()) {
        throw std::invalid_argument("channel " + std::to_string(id) + " has no pages");
    }
    for (const auto& m : spec_.vm(vm).shared) {
        if (m.page == ch.pages.front()) return m.ipa;
    }
    throw std::invalid_argument(to_string(vm) + " does not declare page " + std::to_string(ch.pages.front()));
}

Time reference_transfer_cost(const CostModel& cm, IvcVariant variant) {
    Time t = cm.hyp_call + cm.virtual_interrupt;
    if (variant == IvcVariant::HypcallGated) {
        t += (cm.hyp_call + cm.tlb_flush) * 2;
    }
    return t;
}

Time calibrate_tlb_flush(Time free_total, std::uint64_t pairs, Time hyp_call, double ratio) {
    if (pairs == 0 || !(ratio >= 1.0)) {
        throw std::invalid_argument("calibration needs at least one transfer and a ratio of at least 1");
    }
    // gated = free + 2k(h + f) = ratio * free
    double f = (ratio - 1.0) * static_cast<double>(free_total.count()) / (2.0 * static_cast<double>(pairs)) -
               static_cast<double>(hyp_call.count());
    if (f < 0.0) {
        throw std::invalid_argument("ratio is unreachable: the Hyp calls alone exceed it");
    }
    return Time{static_cast<std::uint64_t>(std::llround(f))};
}

} // namespace tvsim
