#pragma once

#include "tvsim/core.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tvsim {

/// Parses and validates a JSON manifest. Unknown keys are rejected.
/// Throws ConfigError naming the offending field.
SystemSpec load_config(std::string_view text);
SystemSpec load_config_file(const std::filesystem::path& path);

/// Parses an already-decoded manifest document.
SystemSpec load_config_json(const nlohmann::json& doc);

/// Checks the cross-VM invariants of an assembled spec (disjoint PA
/// regions, disjoint IRQ sets, 4 KB alignment, channel consistency).
void validate_system(const SystemSpec& spec);

/// Canonical JSON form; `load_config_json(to_json(s)) == s`.
nlohmann::json to_json(const SystemSpec& spec);

/// Accepts decimal or 0x-prefixed hex, as string or JSON number.
std::uint64_t parse_u64(const nlohmann::json& v, const std::string& where);
std::string hex(std::uint64_t v);

// ---------------------------------------------------------------------------
// Cost-model consistency

/// A measured latency with its reported cycle count.
struct ReferenceLatency {
    CostField field;
    Time time;
    std::uint64_t cycles;
};

/// Reference (time, cycles) pairs for the four measured latencies.
inline constexpr std::array<ReferenceLatency, 4> kReferenceLatencies = {{
    {CostField::HypCall, Time::ns(6580), 6000},
    {CostField::WorldSwitch, Time::ns(25840), 23564},
    {CostField::InterruptEntryExit, Time::ns(7480), 6824},
    {CostField::VirtualInterrupt, Time::ns(29710), 27094},
}};

/// Clock implied by the reference table (cycles / time, rounded).
inline constexpr double kImpliedClockMhz = 912.0;

struct CostReportRow {
    CostField field;
    Time time;
    double cycles = 0.0;
    std::optional<std::uint64_t> reference_cycles;
    /// |cycles - reference| / reference; 0 when there is no reference.
    double deviation = 0.0;
    /// reference_cycles / time, in MHz.
    std::optional<double> implied_clock_mhz;
};

struct CostReport {
    double clock_mhz = 0.0;
    std::vector<CostReportRow> rows;
    /// Every referenced row deviates by at most `tolerance`.
    bool consistent = true;
    double tolerance = 0.0;
};

CostReport validate_cost_model(const CostModel& cm, double clock_mhz, double tolerance = 1e-3);

} // namespace tvsim
