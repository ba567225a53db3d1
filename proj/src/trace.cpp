#include "tvsim/trace.hpp"

#include <nlohmann/json.hpp>

#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tvsim {

std::string to_string(const Actor& a) { return a.vm ? to_string(*a.vm) : "hyp"; }

std::string to_csv_line(const TraceRecord& r) {
    std::string line;
    line.reserve(64 + r.detail.size());
    line += std::to_string(r.time.count());
    line += ',';
    line += to_string(r.actor);
    line += ',';
    line += r.kind;
    line += ',';
    if (r.cost_field) line += to_string(*r.cost_field);
    line += ',';
    line += std::to_string(r.cost.count());
    line += ',';
    line += r.detail;
    return line;
}

void write_csv(std::ostream& os, const Trace& trace) {
    os << kCsvHeader << '\n';
    for (const auto& r : trace) {
        os << to_csv_line(r) << '\n';
    }
}

void write_jsonl(std::ostream& os, const Trace& trace) {
    for (const auto& r : trace) {
        nlohmann::ordered_json j;
        j["time_ns"] = r.time.count();
        j["actor"] = to_string(r.actor);
        j["kind"] = r.kind;
        j["cost_field"] = r.cost_field ? std::string(to_string(*r.cost_field)) : std::string();
        j["cost_ns"] = r.cost.count();
        j["detail"] = r.detail;
        os << j.dump() << '\n';
    }
}

namespace {

Actor parse_actor(std::string_view s) {
    if (s == "hyp") return Actor::hypervisor();
    if (s.size() > 2 && s.substr(0, 2) == "vm") {
        return Actor::of(VmId{static_cast<std::uint32_t>(std::stoul(std::string(s.substr(2))))});
    }
    throw std::runtime_error("bad actor: " + std::string(s));
}

} // namespace

Trace parse_csv(std::string_view text) {
    Trace out;
    std::size_t pos = 0;
    bool header = true;
    std::size_t lineno = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++lineno;
        if (header) {
            if (line != kCsvHeader) throw std::runtime_error("unexpected CSV header");
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::array<std::string_view, 6> cols;
        std::size_t start = 0;
        for (std::size_t c = 0; c < 5; ++c) {
            auto comma = line.find(',', start);
            if (comma == std::string_view::npos) {
                throw std::runtime_error("line " + std::to_string(lineno) + ": expected 6 columns");
            }
            cols[c] = line.substr(start, comma - start);
            start = comma + 1;
        }
        cols[5] = line.substr(start);
        TraceRecord r;
        r.time = Time{std::stoull(std::string(cols[0]))};
        r.actor = parse_actor(cols[1]);
        r.kind = std::string(cols[2]);
        if (!cols[3].empty()) {
            r.cost_field = cost_field_from_string(cols[3]);
            if (!r.cost_field) throw std::runtime_error("line " + std::to_string(lineno) + ": unknown cost field");
        }
        r.cost = Time{std::stoull(std::string(cols[4]))};
        r.detail = std::string(cols[5]);
        out.push_back(std::move(r));
    }
    return out;
}

std::optional<std::size_t> compare_traces(const Trace& a, const Trace& b) {
    auto n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (to_csv_line(a[i]) != to_csv_line(b[i])) {
            return i;
        }
    }
    if (a.size() != b.size()) {
        return n;
    }
    return std::nullopt;
}

std::optional<std::string> detail_value(std::string_view detail, std::string_view key) {
    std::size_t pos = 0;
    while (pos <= detail.size()) {
        auto end = detail.find(';', pos);
        if (end == std::string_view::npos) end = detail.size();
        auto item = detail.substr(pos, end - pos);
        auto eq = item.find('=');
        if (eq != std::string_view::npos && item.substr(0, eq) == key) {
            return std::string(item.substr(eq + 1));
        }
        pos = end + 1;
    }
    return std::nullopt;
}

} // namespace tvsim
