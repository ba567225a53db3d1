#pragma once

#include "tvsim/core.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tvsim {

/// Who a trace record is attributed to: a VM, or the hypervisor when empty.
struct Actor {
    std::optional<VmId> vm;

    static Actor hypervisor() { return {}; }
    static Actor of(VmId id) { return {id}; }
    bool operator==(const Actor&) const = default;
};

std::string to_string(const Actor& a);

/// One trace line. `detail` is a `key=value;key=value` list without commas.
struct TraceRecord {
    Time time;
    Actor actor;
    std::string kind;
    std::optional<CostField> cost_field;
    Time cost;
    std::string detail;

    bool operator==(const TraceRecord&) const = default;
};

/// Record kinds emitted by the framework and the engine.
namespace rec {
inline constexpr std::string_view kConfig = "config";
inline constexpr std::string_view kEnd = "end";
inline constexpr std::string_view kInit = "init";
inline constexpr std::string_view kAllocate = "allocate";
inline constexpr std::string_view kEnque = "enque";
inline constexpr std::string_view kSchedule = "schedule";
inline constexpr std::string_view kBlock = "block";
inline constexpr std::string_view kUnblock = "unblock";
inline constexpr std::string_view kYield = "yield";
inline constexpr std::string_view kCheckpoint = "checkpoint";
inline constexpr std::string_view kDispatch = "dispatch";
inline constexpr std::string_view kFlagSet = "flag_set";
inline constexpr std::string_view kTimerArm = "timer_arm";
inline constexpr std::string_view kTimerCancel = "timer_cancel";
inline constexpr std::string_view kTimerFire = "timer_fire";
inline constexpr std::string_view kRun = "run";
inline constexpr std::string_view kIdle = "idle";
inline constexpr std::string_view kCharge = "charge";
inline constexpr std::string_view kDeadlineMiss = "deadline_miss";
inline constexpr std::string_view kInject = "inject";
inline constexpr std::string_view kAck = "ack";
inline constexpr std::string_view kEoi = "eoi";
inline constexpr std::string_view kWarning = "warning";
inline constexpr std::string_view kMemAccess = "mem_access";
inline constexpr std::string_view kFault = "fault";
inline constexpr std::string_view kMmio = "mmio";
inline constexpr std::string_view kIvcWrite = "ivc_write";
inline constexpr std::string_view kIvcBusy = "ivc_busy";
inline constexpr std::string_view kHalt = "halt";
inline constexpr std::string_view kCollapse = "collapse";
} // namespace rec

using Trace = std::vector<TraceRecord>;

/// CSV columns, in order.
inline constexpr std::string_view kCsvHeader = "time_ns,actor,kind,cost_field,cost_ns,detail";

std::string to_csv_line(const TraceRecord& r);
void write_csv(std::ostream& os, const Trace& trace);
/// One JSON object per line, keys in CSV column order.
void write_jsonl(std::ostream& os, const Trace& trace);

/// Inverse of write_csv. Throws std::runtime_error on malformed input.
Trace parse_csv(std::string_view text);

/// Returns the index of the first record at which the traces differ, or
/// nullopt when they are equal. Length mismatch diverges at the shorter length.
std::optional<std::size_t> compare_traces(const Trace& a, const Trace& b);

/// Looks up `key` in a `k=v;k=v` detail string.
std::optional<std::string> detail_value(std::string_view detail, std::string_view key);

} // namespace tvsim
