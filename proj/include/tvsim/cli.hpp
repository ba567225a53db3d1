#pragma once

#include "tvsim/metrics.hpp"
#include "tvsim/trace.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace tvsim {

/// Process exit statuses of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitCheckFailed = 1,
    kExitConfigError = 2,
    kExitContractViolation = 3,
    kExitIoError = 4,
};

/// Entry point of the `tvsim` tool. `args` excludes the program name.
///
///   run          --config F --horizon-ns N [--out DIR] [--format csv|json]
///   sweep        --config F --horizon-ns N --sweep KEY --values V1,V2,.. [--out DIR]
///   generate     --seed N [--out DIR]
///   check-costs  [--config F] [--clock-mhz MHZ]
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Maps a dotted config key (`cost_model.world_switch`, `vms.0.regions.1.len`)
/// to a JSON pointer string.
std::string dotted_key_to_pointer(const std::string& key);

/// gnuplot-ready step data: `time_ns vm_id state`, with vm_id -1 for the
/// hypervisor and idle, and state 0 = idle, 1 = VM running, 2 = hypervisor.
void write_timeline(std::ostream& os, const Trace& trace);

} // namespace tvsim
