#include "tvsim/metrics.hpp"

#include <stdexcept>

namespace tvsim {

std::uint64_t MetricsReport::total_deadline_misses() const {
    std::uint64_t n = 0;
    for (const auto& v : vms) n += v.deadline_misses;
    return n;
}

Time MetricsReport::total_cpu_time() const {
    Time t;
    for (const auto& v : vms) t += v.cpu_time;
    return t;
}

MetricsReport compute_metrics(const Trace& trace) {
    MetricsReport m;
    bool have_config = false;
    auto vm_slot = [&](const TraceRecord& r) -> VmMetrics& {
        if (!r.actor.vm || r.actor.vm->index >= m.vms.size()) {
            throw std::runtime_error("trace record '" + r.kind + "' without a valid VM actor");
        }
        return m.vms[r.actor.vm->index];
    };
    for (const auto& r : trace) {
        if (r.kind == rec::kConfig) {
            m.horizon = Time{std::stoull(detail_value(r.detail, "horizon_ns").value_or("0"))};
            m.vms.assign(std::stoul(detail_value(r.detail, "vms").value_or("0")), VmMetrics{});
            have_config = true;
            continue;
        }
        if (!have_config) {
            throw std::runtime_error("trace does not start with a config record");
        }
        m.hypervisor_overhead_time += r.cost;
        if (r.kind == rec::kRun) {
            vm_slot(r).cpu_time += Time{std::stoull(detail_value(r.detail, "ns").value_or("0"))};
        } else if (r.kind == rec::kIdle) {
            m.idle_time += Time{std::stoull(detail_value(r.detail, "ns").value_or("0"))};
        } else if (r.kind == rec::kDispatch) {
            ++vm_slot(r).switch_in_count;
        } else if (r.kind == rec::kDeadlineMiss) {
            ++vm_slot(r).deadline_misses;
        } else if (r.kind == rec::kInject) {
            ++vm_slot(r).irqs_received;
        } else if (r.kind == rec::kIvcWrite) {
            ++m.ivc_transfers;
        }
    }
    if (m.horizon.count() > 0) {
        m.utilization = static_cast<double>(m.total_cpu_time().count()) / static_cast<double>(m.horizon.count());
    }
    return m;
}

nlohmann::ordered_json to_json(const MetricsReport& m) {
    nlohmann::ordered_json j;
    j["horizon_ns"] = m.horizon.count();
    auto vms = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < m.vms.size(); ++i) {
        const auto& v = m.vms[i];
        nlohmann::ordered_json e;
        e["vm"] = i;
        e["cpu_time_ns"] = v.cpu_time.count();
        e["switch_in_count"] = v.switch_in_count;
        e["deadline_misses"] = v.deadline_misses;
        e["irqs_received"] = v.irqs_received;
        vms.push_back(e);
    }
    j["vms"] = vms;
    j["hypervisor_overhead_time_ns"] = m.hypervisor_overhead_time.count();
    j["idle_time_ns"] = m.idle_time.count();
    j["ivc_transfers"] = m.ivc_transfers;
    j["utilization"] = m.utilization;
    return j;
}

} // namespace tvsim
