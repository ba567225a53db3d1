#include "tvsim/memmap.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace tvsim {

Stage2Map::Stage2Map(const SystemSpec& spec) : gicd_base_(spec.platform.gicd_base) {
    for (const auto& p : spec.shared_pages) {
        page_pa_[p.id] = p.pa;
    }
    std::set<std::uint32_t> gated_pages;
    for (const auto& ch : spec.channels) {
        if (ch.variant == IvcVariant::HypcallGated) {
            gated_pages.insert(ch.pages.begin(), ch.pages.end());
        }
    }
    vms_.resize(spec.vms.size());
    for (const auto& vm : spec.vms) {
        auto& t = vms_.at(vm.id.index);
        t.regions = vm.regions;
        std::sort(t.regions.begin(), t.regions.end(),
                  [](const MemRegion& a, const MemRegion& b) { return a.ipa_base < b.ipa_base; });
        for (const auto& m : vm.shared) {
            t.declared[m.page] = m;
            if (!gated_pages.count(m.page)) {
                map_shared_page(vm.id, m.ipa, m.page, m.perms, MapMode::Boot);
            }
        }
    }
}

Translation Stage2Map::translate(VmId vm, std::uint64_t ipa, Access access) const {
    const auto& t = vms_.at(vm.index);
    auto permitted = [access](Perms p) { return access == Access::Read ? p.read : p.write; };

    if (ipa >= gicd_base_ && ipa - gicd_base_ < kPageSize) {
        return MmioRoute{static_cast<std::uint32_t>(ipa - gicd_base_)};
    }
    auto it = std::upper_bound(t.regions.begin(), t.regions.end(), ipa,
                               [](std::uint64_t a, const MemRegion& r) { return a < r.ipa_base; });
    if (it != t.regions.begin()) {
        const auto& r = *std::prev(it);
        if (ipa < r.ipa_end()) {
            if (permitted(r.perms)) return PhysicalAddress{r.pa_base + (ipa - r.ipa_base)};
            return Stage2Fault{vm, ipa, access};
        }
    }
    auto page = ipa & ~(kPageSize - 1);
    if (auto s = t.shared.find(page); s != t.shared.end()) {
        if (permitted(s->second.perms)) return PhysicalAddress{page_pa_.at(s->second.page_id) + (ipa - page)};
    }
    return Stage2Fault{vm, ipa, access};
}

bool Stage2Map::ipa_occupied(const VmTable& t, std::uint64_t ipa_page, std::uint32_t ignore_page) const {
    if (ipa_page >= gicd_base_ && ipa_page - gicd_base_ < kPageSize) return true;
    for (const auto& r : t.regions) {
        if (ipa_page < r.ipa_end() && r.ipa_base < ipa_page + kPageSize) return true;
    }
    auto s = t.shared.find(ipa_page);
    return s != t.shared.end() && s->second.page_id != ignore_page;
}

std::vector<CostField> Stage2Map::map_shared_page(VmId vm, std::uint64_t ipa_page, std::uint32_t page_id, Perms perms,
                                                  MapMode mode) {
    auto& t = vms_.at(vm.index);
    if (ipa_page % kPageSize != 0) {
        throw std::invalid_argument("shared page IPA is not 4KB aligned");
    }
    auto decl = t.declared.find(page_id);
    if (decl == t.declared.end() || !page_pa_.count(page_id)) {
        throw std::invalid_argument("shared page " + std::to_string(page_id) + " is not declared for " + to_string(vm));
    }
    if ((perms.read && !decl->second.perms.read) || (perms.write && !decl->second.perms.write)) {
        throw std::invalid_argument("requested permissions exceed the declared ones");
    }
    if (ipa_occupied(t, ipa_page, page_id)) {
        throw std::invalid_argument("IPA " + std::to_string(ipa_page) + " is already mapped");
    }
    for (auto it = t.shared.begin(); it != t.shared.end(); ++it) {
        if (it->second.page_id == page_id) {
            t.shared.erase(it);
            break;
        }
    }
    t.shared[ipa_page] = SharedEntry{ipa_page, page_id, perms};
    if (mode == MapMode::Gated) return {CostField::HypCall, CostField::TlbFlush};
    return {};
}

std::vector<CostField> Stage2Map::unmap_shared_page(VmId vm, std::uint32_t page_id, MapMode mode) {
    auto& t = vms_.at(vm.index);
    for (auto it = t.shared.begin(); it != t.shared.end(); ++it) {
        if (it->second.page_id == page_id) {
            t.shared.erase(it);
            break;
        }
    }
    if (mode == MapMode::Gated) return {CostField::HypCall, CostField::TlbFlush};
    return {};
}

std::vector<SharedEntry> Stage2Map::shared_entries(VmId vm) const {
    std::vector<SharedEntry> out;
    for (const auto& [_, e] : vms_.at(vm.index).shared) out.push_back(e);
    return out;
}

std::optional<SharedEntry> Stage2Map::shared_entry(VmId vm, std::uint32_t page_id) const {
    for (const auto& [_, e] : vms_.at(vm.index).shared) {
        if (e.page_id == page_id) return e;
    }
    return std::nullopt;
}

Time remap_cost(const CostModel& cm, MapMode mode) {
    return mode == MapMode::Gated ? cm.hyp_call + cm.tlb_flush : Time{};
}

} // namespace tvsim
