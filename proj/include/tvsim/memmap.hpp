#pragma once

#include "tvsim/core.hpp"

#include <map>
#include <span>
#include <variant>
#include <vector>

namespace tvsim {

struct PhysicalAddress {
    std::uint64_t pa = 0;
    bool operator==(const PhysicalAddress&) const = default;
};

/// Access to the trapped distributor window; `offset` is relative to its base.
struct MmioRoute {
    std::uint32_t offset = 0;
    bool operator==(const MmioRoute&) const = default;
};

struct Stage2Fault {
    VmId vm;
    std::uint64_t ipa = 0;
    Access access = Access::Read;
    bool operator==(const Stage2Fault&) const = default;
};

using Translation = std::variant<PhysicalAddress, MmioRoute, Stage2Fault>;

/// How a shared-page mapping change is performed.
enum class MapMode : std::uint8_t {
    Boot,   // static setup, no hypervisor cost
    Gated,  // guest-requested through a Hyp call; the table change needs a TLB flush
};

struct SharedEntry {
    std::uint64_t ipa_page = 0;
    std::uint32_t page_id = 0;
    Perms perms;
    bool operator==(const SharedEntry&) const = default;
};

/// Stage-2 (IPA -> PA) tables of every VM.
///
/// Private regions are static. Shared entries are single 4 KB pages that a
/// VM may remap to any free IPA, but only for pages the configuration
/// declares for it.
class Stage2Map {
public:
    /// Builds private regions for every VM. Declared shared pages are mapped
    /// at boot, except pages of Hyp-call-gated channels, which stay unmapped
    /// until the channel is acquired.
    explicit Stage2Map(const SystemSpec& spec);

    [[nodiscard]] Translation translate(VmId vm, std::uint64_t ipa, Access access) const;

    /// Maps declared shared page `page_id` at `ipa_page`, replacing any
    /// previous mapping of that page in the VM. Returns the costs the change
    /// incurs. Throws std::invalid_argument for undeclared pages, misaligned
    /// or already-occupied IPAs.
    std::vector<CostField> map_shared_page(VmId vm, std::uint64_t ipa_page, std::uint32_t page_id, Perms perms,
                                           MapMode mode);
    std::vector<CostField> unmap_shared_page(VmId vm, std::uint32_t page_id, MapMode mode);

    [[nodiscard]] std::span<const MemRegion> regions(VmId vm) const { return vms_.at(vm.index).regions; }
    [[nodiscard]] std::vector<SharedEntry> shared_entries(VmId vm) const;
    [[nodiscard]] std::optional<SharedEntry> shared_entry(VmId vm, std::uint32_t page_id) const;
    [[nodiscard]] std::uint64_t gicd_base() const noexcept { return gicd_base_; }
    [[nodiscard]] std::size_t vm_count() const noexcept { return vms_.size(); }

private:
    struct VmTable {
        std::vector<MemRegion> regions;                  // sorted by ipa_base
        std::map<std::uint64_t, SharedEntry> shared;     // keyed by ipa_page
        std::map<std::uint32_t, SharedMapping> declared; // page id -> declared default mapping
    };

    [[nodiscard]] bool ipa_occupied(const VmTable& t, std::uint64_t ipa_page, std::uint32_t ignore_page) const;

    std::vector<VmTable> vms_;
    std::map<std::uint32_t, std::uint64_t> page_pa_;
    std::uint64_t gicd_base_ = 0;
};

/// Charges for a gated (Hyp-call) remap: the call plus a TLB flush.
Time remap_cost(const CostModel& cm, MapMode mode);

} // namespace tvsim
