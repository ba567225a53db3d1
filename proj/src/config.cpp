#include "tvsim/config.hpp"

#include "tvsim/sched_framework.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <map>
#include <set>
#include <sstream>

namespace tvsim {

using nlohmann::json;

namespace {

std::string join(const std::string& base, std::string_view key) {
    return base.empty() ? std::string(key) : base + "." + std::string(key);
}
std::string join(const std::string& base, std::size_t idx) {
    return base + "[" + std::to_string(idx) + "]";
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) {
        throw ConfigError(where, "expected an object");
    }
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(join(where, key), "unknown key");
        }
    }
}

const json& require(const json& obj, std::string_view key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw ConfigError(join(where, key), "missing required key");
    }
    return *it;
}

const json& require_array(const json& obj, std::string_view key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_array()) {
        throw ConfigError(join(where, key), "expected an array");
    }
    return v;
}

std::uint32_t parse_u32(const json& v, const std::string& where) {
    auto x = parse_u64(v, where);
    if (x > std::numeric_limits<std::uint32_t>::max()) {
        throw ConfigError(where, "value out of range");
    }
    return static_cast<std::uint32_t>(x);
}

Time parse_time(const json& v, const std::string& where) { return Time{parse_u64(v, where)}; }

bool parse_bool(const json& v, const std::string& where) {
    if (!v.is_boolean()) {
        throw ConfigError(where, "expected a boolean");
    }
    return v.get<bool>();
}

std::string parse_string(const json& v, const std::string& where) {
    if (!v.is_string()) {
        throw ConfigError(where, "expected a string");
    }
    return v.get<std::string>();
}

Perms parse_perms(const json& v, const std::string& where) {
    auto s = parse_string(v, where);
    Perms p;
    for (char c : s) {
        if (c == 'r' && !p.read) {
            p.read = true;
        } else if (c == 'w' && !p.write) {
            p.write = true;
        } else {
            throw ConfigError(where, "perms must be one of \"r\", \"w\", \"rw\"");
        }
    }
    if (!p.read && !p.write) {
        throw ConfigError(where, "empty permission set");
    }
    return p;
}

std::vector<std::uint32_t> parse_id_list(const json& v, const std::string& where) {
    if (!v.is_array()) {
        throw ConfigError(where, "expected an array");
    }
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(parse_u32(v[i], join(where, i)));
    }
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end()) {
        throw ConfigError(where, "duplicate entry");
    }
    return out;
}

CostModel parse_cost_model(const json& v, const std::string& where) {
    check_keys(v, where, {"hyp_call", "world_switch", "interrupt_entry_exit", "virtual_interrupt",
                          "tlb_flush", "mmio_emulation"});
    CostModel cm;
    for (auto f : kAllCostFields) {
        cm.get(f) = parse_time(require(v, to_string(f), where), join(where, to_string(f)));
    }
    return cm;
}

WorkloadOp parse_op(const json& v, const std::string& where) {
    auto kind = parse_string(require(v, "op", where), join(where, "op"));
    auto channel = [&] { return parse_u32(require(v, "channel", where), join(where, "channel")); };
    if (kind == "compute") {
        check_keys(v, where, {"op", "ns"});
        auto d = parse_time(require(v, "ns", where), join(where, "ns"));
        if (d == Time{}) {
            throw ConfigError(join(where, "ns"), "compute duration must be positive");
        }
        return op::Compute{d};
    }
    if (kind == "hypcall") {
        check_keys(v, where, {"op"});
        return op::HypCall{};
    }
    if (kind == "wfi") {
        check_keys(v, where, {"op"});
        return op::Wfi{};
    }
    if (kind == "mmio") {
        check_keys(v, where, {"op", "ipa", "access", "value"});
        op::Mmio m;
        m.ipa = parse_u64(require(v, "ipa", where), join(where, "ipa"));
        auto acc = parse_string(require(v, "access", where), join(where, "access"));
        if (acc == "r") {
            m.access = Access::Read;
        } else if (acc == "w") {
            m.access = Access::Write;
        } else {
            throw ConfigError(join(where, "access"), "expected \"r\" or \"w\"");
        }
        if (v.contains("value")) {
            m.value = parse_u32(v["value"], join(where, "value"));
        }
        return m;
    }
    if (kind == "ivc_notify") {
        check_keys(v, where, {"op", "channel"});
        return op::IvcNotify{channel()};
    }
    if (kind == "ivc_acquire") {
        check_keys(v, where, {"op", "channel"});
        return op::IvcAcquire{channel()};
    }
    if (kind == "ivc_release") {
        check_keys(v, where, {"op", "channel"});
        return op::IvcRelease{channel()};
    }
    if (kind == "ivc_write") {
        check_keys(v, where, {"op", "channel", "bytes"});
        return op::IvcWrite{channel(), parse_u64(require(v, "bytes", where), join(where, "bytes"))};
    }
    throw ConfigError(join(where, "op"), "unknown workload op \"" + kind + "\"");
}

Workload parse_workload(const json& v, const std::string& where) {
    check_keys(v, where, {"loop", "ops"});
    Workload w;
    if (v.contains("loop")) {
        w.loop = parse_bool(v["loop"], join(where, "loop"));
    }
    if (v.contains("ops")) {
        const auto& ops = v["ops"];
        if (!ops.is_array()) {
            throw ConfigError(join(where, "ops"), "expected an array");
        }
        for (std::size_t i = 0; i < ops.size(); ++i) {
            w.ops.push_back(parse_op(ops[i], join(join(where, "ops"), i)));
        }
    }
    return w;
}

VmSpec parse_vm(const json& v, std::size_t index, const std::string& where) {
    check_keys(v, where, {"id", "regions", "irqs", "virqs", "shared", "workload"});
    VmSpec vm;
    auto id = parse_u32(require(v, "id", where), join(where, "id"));
    if (id != index) {
        throw ConfigError(join(where, "id"), "VM ids must be dense and in order (expected " +
                                                 std::to_string(index) + ")");
    }
    vm.id = VmId{id};
    if (v.contains("regions")) {
        const auto& regions = require_array(v, "regions", where);
        for (std::size_t i = 0; i < regions.size(); ++i) {
            auto rw = join(join(where, "regions"), i);
            const auto& r = regions[i];
            check_keys(r, rw, {"ipa", "pa", "len", "perms"});
            MemRegion m;
            m.ipa_base = parse_u64(require(r, "ipa", rw), join(rw, "ipa"));
            m.pa_base = parse_u64(require(r, "pa", rw), join(rw, "pa"));
            m.length = parse_u64(require(r, "len", rw), join(rw, "len"));
            if (r.contains("perms")) {
                m.perms = parse_perms(r["perms"], join(rw, "perms"));
            }
            vm.regions.push_back(m);
        }
    }
    if (v.contains("irqs")) {
        vm.irqs = parse_id_list(v["irqs"], join(where, "irqs"));
    }
    if (v.contains("virqs")) {
        vm.virqs = parse_id_list(v["virqs"], join(where, "virqs"));
    }
    if (v.contains("shared")) {
        const auto& shared = require_array(v, "shared", where);
        for (std::size_t i = 0; i < shared.size(); ++i) {
            auto sw = join(join(where, "shared"), i);
            const auto& s = shared[i];
            check_keys(s, sw, {"page", "ipa", "perms"});
            SharedMapping m;
            m.page = parse_u32(require(s, "page", sw), join(sw, "page"));
            m.ipa = parse_u64(require(s, "ipa", sw), join(sw, "ipa"));
            if (s.contains("perms")) {
                m.perms = parse_perms(s["perms"], join(sw, "perms"));
            }
            vm.shared.push_back(m);
        }
    }
    if (v.contains("workload")) {
        vm.workload = parse_workload(v["workload"], join(where, "workload"));
    }
    return vm;
}

bool overlaps(std::uint64_t a0, std::uint64_t a1, std::uint64_t b0, std::uint64_t b1) {
    return a0 < b1 && b0 < a1;
}

bool aligned(std::uint64_t v) { return v % kPageSize == 0; }

} // namespace

std::uint64_t parse_u64(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) {
        return v.get<std::uint64_t>();
    }
    if (v.is_number_integer()) {
        auto x = v.get<std::int64_t>();
        if (x < 0) {
            throw ConfigError(where, "expected a non-negative integer");
        }
        return static_cast<std::uint64_t>(x);
    }
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        std::string_view digits = s;
        int base = 10;
        if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) {
            digits.remove_prefix(2);
            base = 16;
        }
        std::string cleaned;
        for (char c : digits) {
            if (c != '_') cleaned += c;
        }
        if (cleaned.empty()) {
            throw ConfigError(where, "empty number");
        }
        std::size_t pos = 0;
        std::uint64_t out = 0;
        try {
            out = std::stoull(cleaned, &pos, base);
        } catch (const std::exception&) {
            throw ConfigError(where, "invalid number \"" + s + "\"");
        }
        if (pos != cleaned.size() || cleaned[0] == '-' || cleaned[0] == '+') {
            throw ConfigError(where, "invalid number \"" + s + "\"");
        }
        return out;
    }
    throw ConfigError(where, "expected an integer or a numeric string");
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

SystemSpec load_config_json(const json& doc) {
    check_keys(doc, "", {"cost_model", "scheduler", "vms", "shared_pages", "channels", "irq_events", "platform"});
    SystemSpec spec;
    if (doc.contains("cost_model")) {
        spec.cost_model = parse_cost_model(doc["cost_model"], "cost_model");
    }

    const auto& vms = require_array(doc, "vms", "");
    for (std::size_t i = 0; i < vms.size(); ++i) {
        spec.vms.push_back(parse_vm(vms[i], i, join("vms", i)));
    }

    if (doc.contains("scheduler")) {
        const auto& s = doc["scheduler"];
        check_keys(s, "scheduler", {"name", "quantum_ns", "sched_param"});
        spec.scheduler.name = parse_string(require(s, "name", "scheduler"), "scheduler.name");
        if (s.contains("quantum_ns")) {
            spec.scheduler.quantum = parse_time(s["quantum_ns"], "scheduler.quantum_ns");
        }
        if (s.contains("sched_param")) {
            const auto& params = s["sched_param"];
            if (!params.is_array()) {
                throw ConfigError("scheduler.sched_param", "expected an array indexed by VM id");
            }
            if (params.size() > spec.vms.size()) {
                throw ConfigError("scheduler.sched_param", "more entries than VMs");
            }
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (!params[i].is_null() && !params[i].is_object()) {
                    throw ConfigError(join("scheduler.sched_param", i), "expected an object");
                }
                spec.vms[i].sched_param = params[i];
            }
        }
    }

    if (doc.contains("shared_pages")) {
        const auto& pages = require_array(doc, "shared_pages", "");
        for (std::size_t i = 0; i < pages.size(); ++i) {
            auto w = join("shared_pages", i);
            check_keys(pages[i], w, {"id", "pa"});
            spec.shared_pages.push_back({parse_u32(require(pages[i], "id", w), join(w, "id")),
                                         parse_u64(require(pages[i], "pa", w), join(w, "pa"))});
        }
    }

    if (doc.contains("channels")) {
        const auto& chans = require_array(doc, "channels", "");
        for (std::size_t i = 0; i < chans.size(); ++i) {
            auto w = join("channels", i);
            const auto& c = chans[i];
            check_keys(c, w, {"id", "endpoints", "pages", "virqs", "variant"});
            ChannelSpec ch;
            ch.id = parse_u32(require(c, "id", w), join(w, "id"));
            const auto& ep = require_array(c, "endpoints", w);
            const auto& vq = require_array(c, "virqs", w);
            if (ep.size() != 2) throw ConfigError(join(w, "endpoints"), "expected two endpoints");
            if (vq.size() != 2) throw ConfigError(join(w, "virqs"), "expected one virq per endpoint");
            for (std::size_t k = 0; k < 2; ++k) {
                ch.endpoints[k] = VmId{parse_u32(ep[k], join(join(w, "endpoints"), k))};
                ch.virqs[k] = parse_u32(vq[k], join(join(w, "virqs"), k));
            }
            const auto& pg = require_array(c, "pages", w);
            for (std::size_t k = 0; k < pg.size(); ++k) {
                ch.pages.push_back(parse_u32(pg[k], join(join(w, "pages"), k)));
            }
            if (c.contains("variant")) {
                auto variant = parse_string(c["variant"], join(w, "variant"));
                if (variant == "free_access") {
                    ch.variant = IvcVariant::FreeAccess;
                } else if (variant == "hypcall_gated") {
                    ch.variant = IvcVariant::HypcallGated;
                } else {
                    throw ConfigError(join(w, "variant"), "expected \"free_access\" or \"hypcall_gated\"");
                }
            }
            spec.channels.push_back(std::move(ch));
        }
    }

    if (doc.contains("irq_events")) {
        const auto& evs = require_array(doc, "irq_events", "");
        for (std::size_t i = 0; i < evs.size(); ++i) {
            auto w = join("irq_events", i);
            const auto& e = evs[i];
            check_keys(e, w, {"irq", "at_ns", "period_ns", "count"});
            IrqEventSpec ev;
            ev.irq = parse_u32(require(e, "irq", w), join(w, "irq"));
            ev.at = parse_time(require(e, "at_ns", w), join(w, "at_ns"));
            if (e.contains("period_ns")) ev.period = parse_time(e["period_ns"], join(w, "period_ns"));
            if (e.contains("count")) ev.count = parse_u64(e["count"], join(w, "count"));
            spec.irq_events.push_back(ev);
        }
    }

    if (doc.contains("platform")) {
        const auto& p = doc["platform"];
        check_keys(p, "platform", {"lr_count", "gicd_base", "stage2_fault", "unmodeled_mmio", "irqs_enabled_at_boot"});
        if (p.contains("lr_count")) spec.platform.lr_count = parse_u32(p["lr_count"], "platform.lr_count");
        if (p.contains("gicd_base")) spec.platform.gicd_base = parse_u64(p["gicd_base"], "platform.gicd_base");
        if (p.contains("stage2_fault")) {
            auto s = parse_string(p["stage2_fault"], "platform.stage2_fault");
            if (s == "inject") {
                spec.platform.stage2_fault = FaultPolicy::Inject;
            } else if (s == "halt") {
                spec.platform.stage2_fault = FaultPolicy::Halt;
            } else {
                throw ConfigError("platform.stage2_fault", "expected \"inject\" or \"halt\"");
            }
        }
        if (p.contains("unmodeled_mmio")) {
            auto s = parse_string(p["unmodeled_mmio"], "platform.unmodeled_mmio");
            if (s == "fault") {
                spec.platform.unmodeled_mmio = UnmodeledMmioPolicy::Fault;
            } else if (s == "ignore") {
                spec.platform.unmodeled_mmio = UnmodeledMmioPolicy::Ignore;
            } else {
                throw ConfigError("platform.unmodeled_mmio", "expected \"fault\" or \"ignore\"");
            }
        }
        if (p.contains("irqs_enabled_at_boot")) {
            spec.platform.irqs_enabled_at_boot = parse_bool(p["irqs_enabled_at_boot"], "platform.irqs_enabled_at_boot");
        }
    }

    validate_system(spec);
    return spec;
}

SystemSpec load_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("malformed JSON: ") + e.what());
    }
    return load_config_json(doc);
}

SystemSpec load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("", "cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_config(ss.str());
}

void validate_system(const SystemSpec& spec) {
    const auto& plat = spec.platform;
    if (plat.lr_count == 0 || plat.lr_count > 16) {
        throw ConfigError("platform.lr_count", "must be in 1..16");
    }
    if (!aligned(plat.gicd_base)) {
        throw ConfigError("platform.gicd_base", "not 4KB aligned");
    }
    const std::uint64_t gicd_end = plat.gicd_base + kPageSize;

    // Shared pages: aligned, unique, disjoint.
    std::set<std::uint32_t> page_ids;
    for (std::size_t i = 0; i < spec.shared_pages.size(); ++i) {
        const auto& p = spec.shared_pages[i];
        auto w = join("shared_pages", i);
        if (!page_ids.insert(p.id).second) throw ConfigError(join(w, "id"), "duplicate shared page id");
        if (!aligned(p.pa)) throw ConfigError(join(w, "pa"), "not 4KB aligned");
        for (std::size_t j = 0; j < i; ++j) {
            if (spec.shared_pages[j].pa == p.pa) {
                throw ConfigError(join(w, "pa"), "PA overlap with shared page " + std::to_string(spec.shared_pages[j].id));
            }
        }
    }

    for (const auto& vm : spec.vms) {
        auto w = join("vms", vm.id.index);
        for (std::size_t i = 0; i < vm.regions.size(); ++i) {
            const auto& r = vm.regions[i];
            auto rw = join(join(w, "regions"), i);
            if (r.length == 0) throw ConfigError(join(rw, "len"), "region length must be positive");
            if (!aligned(r.length)) throw ConfigError(join(rw, "len"), "not 4KB aligned");
            if (!aligned(r.ipa_base)) throw ConfigError(join(rw, "ipa"), "not 4KB aligned");
            if (!aligned(r.pa_base)) throw ConfigError(join(rw, "pa"), "not 4KB aligned");
            if (r.ipa_base + r.length < r.ipa_base || r.pa_base + r.length < r.pa_base) {
                throw ConfigError(rw, "region wraps the address space");
            }
            if (overlaps(r.ipa_base, r.ipa_end(), plat.gicd_base, gicd_end)) {
                throw ConfigError(rw, "IPA range overlaps the distributor window");
            }
            for (std::size_t j = 0; j < i; ++j) {
                if (overlaps(r.ipa_base, r.ipa_end(), vm.regions[j].ipa_base, vm.regions[j].ipa_end())) {
                    throw ConfigError(rw, "IPA overlap with region " + std::to_string(j));
                }
            }
            for (const auto& p : spec.shared_pages) {
                if (overlaps(r.pa_base, r.pa_end(), p.pa, p.pa + kPageSize)) {
                    throw ConfigError(rw, "PA overlap with shared page " + std::to_string(p.id));
                }
            }
        }
        for (auto irq : vm.irqs) {
            if (irq < 16 || irq >= 128) {
                throw ConfigError(join(w, "irqs"), "IRQ " + std::to_string(irq) + " outside assignable range 16..127");
            }
        }
        for (auto virq : vm.virqs) {
            if (virq < 16 || virq >= 1020) {
                throw ConfigError(join(w, "virqs"), "virq " + std::to_string(virq) + " outside 16..1019");
            }
            if (std::binary_search(vm.irqs.begin(), vm.irqs.end(), virq)) {
                throw ConfigError(join(w, "virqs"), "virq " + std::to_string(virq) + " collides with a physical IRQ of this VM");
            }
        }
        std::set<std::uint32_t> mapped;
        for (std::size_t i = 0; i < vm.shared.size(); ++i) {
            const auto& s = vm.shared[i];
            auto sw = join(join(w, "shared"), i);
            if (!spec.shared_page(s.page)) throw ConfigError(join(sw, "page"), "undeclared shared page " + std::to_string(s.page));
            if (!mapped.insert(s.page).second) throw ConfigError(join(sw, "page"), "shared page mapped twice");
            if (!aligned(s.ipa)) throw ConfigError(join(sw, "ipa"), "not 4KB aligned");
            if (overlaps(s.ipa, s.ipa + kPageSize, plat.gicd_base, gicd_end)) {
                throw ConfigError(join(sw, "ipa"), "IPA overlaps the distributor window");
            }
            for (const auto& r : vm.regions) {
                if (overlaps(s.ipa, s.ipa + kPageSize, r.ipa_base, r.ipa_end())) {
                    throw ConfigError(join(sw, "ipa"), "IPA overlaps a private region");
                }
            }
            for (std::size_t j = 0; j < i; ++j) {
                if (vm.shared[j].ipa == s.ipa) throw ConfigError(join(sw, "ipa"), "IPA overlaps another shared mapping");
            }
        }
    }

    // Cross-VM disjointness of private PA ranges and IRQ sets.
    for (std::size_t a = 0; a < spec.vms.size(); ++a) {
        for (std::size_t b = a + 1; b < spec.vms.size(); ++b) {
            const auto& va = spec.vms[a];
            const auto& vb = spec.vms[b];
            for (const auto& ra : va.regions) {
                for (const auto& rb : vb.regions) {
                    if (overlaps(ra.pa_base, ra.pa_end(), rb.pa_base, rb.pa_end())) {
                        throw ConfigError("vms", "PA overlap between " + to_string(va.id) + " and " + to_string(vb.id) +
                                                     " at " + hex(std::max(ra.pa_base, rb.pa_base)));
                    }
                }
            }
            for (auto irq : va.irqs) {
                if (std::binary_search(vb.irqs.begin(), vb.irqs.end(), irq)) {
                    throw ConfigError("vms", "IRQ overlap: IRQ " + std::to_string(irq) + " assigned to both " +
                                                 to_string(va.id) + " and " + to_string(vb.id));
                }
            }
        }
    }

    std::set<std::uint32_t> channel_ids;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
        const auto& ch = spec.channels[i];
        auto w = join("channels", i);
        if (!channel_ids.insert(ch.id).second) throw ConfigError(join(w, "id"), "duplicate channel id");
        if (ch.endpoints[0] == ch.endpoints[1]) throw ConfigError(join(w, "endpoints"), "endpoints must be distinct");
        if (ch.pages.empty()) throw ConfigError(join(w, "pages"), "channel needs at least one shared page");
        for (std::size_t k = 0; k < 2; ++k) {
            auto ep = ch.endpoints[k];
            if (ep.index >= spec.vms.size()) throw ConfigError(join(w, "endpoints"), "unknown VM " + to_string(ep));
            const auto& vm = spec.vm(ep);
            if (!std::binary_search(vm.virqs.begin(), vm.virqs.end(), ch.virqs[k])) {
                throw ConfigError(join(w, "virqs"), "virq " + std::to_string(ch.virqs[k]) + " not declared by " + to_string(ep));
            }
            for (auto page : ch.pages) {
                if (!spec.shared_page(page)) throw ConfigError(join(w, "pages"), "undeclared shared page " + std::to_string(page));
                auto found = std::any_of(vm.shared.begin(), vm.shared.end(),
                                         [page](const SharedMapping& m) { return m.page == page; });
                if (!found) {
                    throw ConfigError(join(w, "pages"), "shared page " + std::to_string(page) + " not declared by " + to_string(ep));
                }
            }
        }
    }

    for (const auto& vm : spec.vms) {
        auto w = join(join("vms", vm.id.index), "workload");
        bool has_compute = false;
        for (std::size_t i = 0; i < vm.workload.ops.size(); ++i) {
            const auto& o = vm.workload.ops[i];
            auto ow = join(join(w, "ops"), i);
            std::optional<std::uint32_t> ch_id;
            std::visit(
                [&](const auto& x) {
                    using T = std::decay_t<decltype(x)>;
                    if constexpr (std::is_same_v<T, op::Compute>) {
                        if (x.duration == Time{}) {
                            throw ConfigError(join(ow, "ns"), "compute duration must be positive");
                        }
                        has_compute = true;
                    } else if constexpr (std::is_same_v<T, op::IvcNotify> || std::is_same_v<T, op::IvcAcquire> ||
                                         std::is_same_v<T, op::IvcRelease> || std::is_same_v<T, op::IvcWrite>) {
                        ch_id = x.channel;
                    }
                },
                o);
            if (ch_id) {
                const auto* ch = spec.channel(*ch_id);
                if (!ch) throw ConfigError(join(ow, "channel"), "undeclared channel " + std::to_string(*ch_id));
                if (ch->endpoints[0] != vm.id && ch->endpoints[1] != vm.id) {
                    throw ConfigError(join(ow, "channel"), to_string(vm.id) + " is not an endpoint of channel " + std::to_string(*ch_id));
                }
            }
        }
        if (vm.workload.loop && !has_compute) {
            throw ConfigError(w, "a looping workload needs at least one compute op");
        }
    }

    for (std::size_t i = 0; i < spec.irq_events.size(); ++i) {
        const auto& e = spec.irq_events[i];
        auto w = join("irq_events", i);
        if (e.irq < 16 || e.irq >= 128) throw ConfigError(join(w, "irq"), "IRQ outside 16..127");
        if (e.period && *e.period == Time{}) throw ConfigError(join(w, "period_ns"), "period must be positive");
        if (e.count && *e.count == 0) throw ConfigError(join(w, "count"), "count must be positive");
    }

    validate_scheduler_config(spec);
}

json to_json(const SystemSpec& spec) {
    json doc = json::object();
    json cm = json::object();
    for (auto f : kAllCostFields) {
        cm[std::string(to_string(f))] = spec.cost_model.get(f).count();
    }
    doc["cost_model"] = cm;

    json sched = json::object();
    sched["name"] = spec.scheduler.name;
    if (spec.scheduler.quantum) sched["quantum_ns"] = spec.scheduler.quantum->count();
    json params = json::array();
    bool any_param = false;
    for (const auto& vm : spec.vms) {
        params.push_back(vm.sched_param);
        any_param = any_param || !vm.sched_param.is_null();
    }
    if (any_param) sched["sched_param"] = params;
    doc["scheduler"] = sched;

    json vms = json::array();
    for (const auto& vm : spec.vms) {
        json v = json::object();
        v["id"] = vm.id.index;
        json regions = json::array();
        for (const auto& r : vm.regions) {
            regions.push_back({{"ipa", hex(r.ipa_base)}, {"pa", hex(r.pa_base)}, {"len", hex(r.length)}, {"perms", to_string(r.perms)}});
        }
        v["regions"] = regions;
        v["irqs"] = vm.irqs;
        v["virqs"] = vm.virqs;
        json shared = json::array();
        for (const auto& s : vm.shared) {
            shared.push_back({{"page", s.page}, {"ipa", hex(s.ipa)}, {"perms", to_string(s.perms)}});
        }
        v["shared"] = shared;
        json ops = json::array();
        for (const auto& o : vm.workload.ops) {
            std::visit(
                [&](const auto& x) {
                    using T = std::decay_t<decltype(x)>;
                    if constexpr (std::is_same_v<T, op::Compute>) {
                        ops.push_back({{"op", "compute"}, {"ns", x.duration.count()}});
                    } else if constexpr (std::is_same_v<T, op::HypCall>) {
                        ops.push_back({{"op", "hypcall"}});
                    } else if constexpr (std::is_same_v<T, op::Wfi>) {
                        ops.push_back({{"op", "wfi"}});
                    } else if constexpr (std::is_same_v<T, op::Mmio>) {
                        ops.push_back({{"op", "mmio"}, {"ipa", hex(x.ipa)}, {"access", x.access == Access::Read ? "r" : "w"},
                                       {"value", hex(x.value)}});
                    } else if constexpr (std::is_same_v<T, op::IvcNotify>) {
                        ops.push_back({{"op", "ivc_notify"}, {"channel", x.channel}});
                    } else if constexpr (std::is_same_v<T, op::IvcAcquire>) {
                        ops.push_back({{"op", "ivc_acquire"}, {"channel", x.channel}});
                    } else if constexpr (std::is_same_v<T, op::IvcRelease>) {
                        ops.push_back({{"op", "ivc_release"}, {"channel", x.channel}});
                    } else if constexpr (std::is_same_v<T, op::IvcWrite>) {
                        ops.push_back({{"op", "ivc_write"}, {"channel", x.channel}, {"bytes", x.bytes}});
                    }
                },
                o);
        }
        v["workload"] = {{"loop", vm.workload.loop}, {"ops", ops}};
        vms.push_back(v);
    }
    doc["vms"] = vms;

    json pages = json::array();
    for (const auto& p : spec.shared_pages) pages.push_back({{"id", p.id}, {"pa", hex(p.pa)}});
    doc["shared_pages"] = pages;

    json chans = json::array();
    for (const auto& c : spec.channels) {
        chans.push_back({{"id", c.id},
                         {"endpoints", {c.endpoints[0].index, c.endpoints[1].index}},
                         {"pages", c.pages},
                         {"virqs", {c.virqs[0], c.virqs[1]}},
                         {"variant", c.variant == IvcVariant::FreeAccess ? "free_access" : "hypcall_gated"}});
    }
    doc["channels"] = chans;

    json evs = json::array();
    for (const auto& e : spec.irq_events) {
        json ev = {{"irq", e.irq}, {"at_ns", e.at.count()}};
        if (e.period) ev["period_ns"] = e.period->count();
        if (e.count) ev["count"] = *e.count;
        evs.push_back(ev);
    }
    doc["irq_events"] = evs;

    doc["platform"] = {
        {"lr_count", spec.platform.lr_count},
        {"gicd_base", hex(spec.platform.gicd_base)},
        {"stage2_fault", spec.platform.stage2_fault == FaultPolicy::Inject ? "inject" : "halt"},
        {"unmodeled_mmio", spec.platform.unmodeled_mmio == UnmodeledMmioPolicy::Fault ? "fault" : "ignore"},
        {"irqs_enabled_at_boot", spec.platform.irqs_enabled_at_boot},
    };
    return doc;
}

CostReport validate_cost_model(const CostModel& cm, double clock_mhz, double tolerance) {
    if (!(clock_mhz > 0.0)) {
        throw std::invalid_argument("clock_mhz must be positive");
    }
    CostReport report;
    report.clock_mhz = clock_mhz;
    report.tolerance = tolerance;
    for (auto f : kAllCostFields) {
        CostReportRow row;
        row.field = f;
        row.time = cm.get(f);
        // ns * MHz / 1000 = cycles
        row.cycles = static_cast<double>(row.time.count()) * clock_mhz / 1000.0;
        for (const auto& ref : kReferenceLatencies) {
            if (ref.field == f && ref.time == row.time) {
                row.reference_cycles = ref.cycles;
                row.deviation = std::abs(row.cycles - static_cast<double>(ref.cycles)) / static_cast<double>(ref.cycles);
                row.implied_clock_mhz = static_cast<double>(ref.cycles) * 1000.0 / static_cast<double>(ref.time.count());
                if (row.deviation > tolerance) {
                    report.consistent = false;
                }
            }
        }
        report.rows.push_back(row);
    }
    return report;
}

} // namespace tvsim
