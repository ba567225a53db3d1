#pragma once

#include "tvsim/memmap.hpp"
#include "tvsim/vgic.hpp"

#include <map>
#include <optional>
#include <vector>

namespace tvsim {

enum class GateResult : std::uint8_t { Acquired, Busy };

struct AcquireOutcome {
    GateResult result = GateResult::Busy;
    /// Hypervisor costs of the request, in charge order.
    std::vector<CostField> costs;
};

struct NotifyOutcome {
    VmId target;
    std::uint32_t virq = 0;
    DeliveryResult delivery;
    std::vector<CostField> costs;
};

/// Channels between VM pairs: shared pages plus a notification virq.
///
/// Free-access channels are mapped in both endpoints from boot and need no
/// hypervisor involvement except for notify. Gated channels map their pages
/// only into the current holder; acquire and release each cost one Hyp call
/// and one TLB flush, however many pages the channel has.
class IvcHub {
public:
    IvcHub(const SystemSpec& spec, Stage2Map& s2, Vgic& vgic);

    /// Sends the channel's virq to the peer of `from`. Throws
    /// std::invalid_argument for unknown channels or non-endpoint callers.
    NotifyOutcome notify(std::uint32_t channel, VmId from);

    /// Gated channels only. A held gate yields Busy and changes nothing
    /// beyond the Hyp call.
    AcquireOutcome acquire(std::uint32_t channel, VmId vm);
    /// Gated channels only. Throws std::invalid_argument unless `vm` holds the gate.
    std::vector<CostField> release(std::uint32_t channel, VmId vm);

    [[nodiscard]] std::optional<VmId> holder(std::uint32_t channel) const;
    [[nodiscard]] const ChannelSpec& channel(std::uint32_t id) const;
    /// IPA at which `vm` sees the first page of the channel.
    [[nodiscard]] std::uint64_t data_ipa(std::uint32_t channel, VmId vm) const;

private:
    const ChannelSpec& endpoint_channel(std::uint32_t id, VmId vm) const;
    const ChannelSpec& gated_channel(std::uint32_t id, VmId vm) const;

    const SystemSpec& spec_;
    Stage2Map& s2_;
    Vgic& vgic_;
    std::map<std::uint32_t, VmId> held_;
};

/// Hypervisor cost of one notified transfer; the gated variant adds an
/// acquire and a release.
Time reference_transfer_cost(const CostModel& cm, IvcVariant variant);

/// TLB-flush cost that makes a gated run cost `ratio` times the free run
/// whose total hypervisor time is `free_total` over `pairs` acquire/release
/// pairs. Throws std::invalid_argument when no non-negative solution exists.
Time calibrate_tlb_flush(Time free_total, std::uint64_t pairs, Time hyp_call, double ratio);

} // namespace tvsim
