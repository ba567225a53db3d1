#include "tvsim/cli.hpp"

#include "tvsim/config.hpp"
#include "tvsim/engine.hpp"
#include "tvsim/generator.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace tvsim {

namespace fs = std::filesystem;

std::string dotted_key_to_pointer(const std::string& key) {
    if (key.empty()) {
        throw ConfigError("--sweep", "empty key");
    }
    std::string out;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("--sweep", "malformed key \"" + key + "\"");
        out += '/';
        for (char c : part) {
            if (c == '~') out += "~0";
            else if (c == '/') out += "~1";
            else out += c;
        }
    }
    return out;
}

void write_timeline(std::ostream& os, const Trace& trace) {
    os << "# time_ns vm_id state\n";
    for (const auto& r : trace) {
        if (r.kind == rec::kRun) {
            os << r.time.count() << ' ' << r.actor.vm->index << " 1\n";
        } else if (r.kind == rec::kIdle) {
            os << r.time.count() << " -1 0\n";
        } else if (r.cost_field && r.cost > Time{}) {
            os << r.time.count() << " -1 2\n";
        } else if (r.kind == rec::kEnd) {
            os << r.time.count() << " -1 0\n";
        }
    }
}

namespace {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

SystemSpec read_config(const std::string& path) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        throw IoError("cannot read config file " + path);
    }
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config file " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_config(ss.str());
}

nlohmann::json read_config_json(const std::string& path) {
    // Canonical form, so keys with defaults resolve too.
    return to_json(read_config(path));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create output directory " + dir.string());
    }
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    return f;
}

void close_out(std::ofstream& f, const fs::path& p) {
    f.close();
    if (!f) throw IoError("error writing " + p.string());
}

void write_run_outputs(const fs::path& dir, const RunResult& r, const std::string& format) {
    ensure_dir(dir);
    auto trace_path = dir / (format == "json" ? "trace.json" : "trace.csv");
    auto f = open_out(trace_path);
    if (format == "json") {
        write_jsonl(f, r.trace);
    } else {
        write_csv(f, r.trace);
    }
    close_out(f, trace_path);

    auto metrics_path = dir / "metrics.json";
    auto m = open_out(metrics_path);
    m << to_json(r.metrics).dump(2) << '\n';
    close_out(m, metrics_path);

    auto timeline_path = dir / "timeline.dat";
    auto t = open_out(timeline_path);
    write_timeline(t, r.trace);
    close_out(t, timeline_path);
}

void print_trace_suffix(std::ostream& err, const Trace& trace, std::size_t n = 12) {
    err << "trace suffix:\n" << kCsvHeader << '\n';
    auto start = trace.size() > n ? trace.size() - n : 0;
    for (auto i = start; i < trace.size(); ++i) err << to_csv_line(trace[i]) << '\n';
}

int cmd_run(const std::string& config, std::uint64_t horizon, const std::string& out_dir, const std::string& format,
            std::ostream& out) {
    auto spec = read_config(config);
    auto result = run(spec, Time{horizon});
    write_run_outputs(out_dir, result, format);
    out << "ok: " << result.trace.size() << " records, " << result.metrics.total_deadline_misses()
        << " deadline misses, overhead " << result.metrics.hypervisor_overhead_time.count() << " ns\n";
    return kExitOk;
}

std::vector<std::uint64_t> parse_values(const std::string& text) {
    std::vector<std::uint64_t> vals;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
        vals.push_back(parse_u64(nlohmann::json(item), "--values"));
    }
    return vals;
}

int cmd_sweep(const std::string& config, std::uint64_t horizon, const std::string& key, const std::string& values,
              const std::string& out_dir, std::ostream& out, std::ostream& err) {
    auto base = read_config_json(config);
    auto ptr = nlohmann::json::json_pointer(dotted_key_to_pointer(key));
    if (!base.contains(ptr)) {
        throw ConfigError(key, "sweep key does not resolve to a config field");
    }
    const auto& field = base.at(ptr);
    bool as_string = field.is_string();
    if (as_string) {
        parse_u64(field, key);  // must be numeric
    } else if (!field.is_number_integer() && !field.is_number_unsigned()) {
        throw ConfigError(key, "sweep key does not name a numeric field");
    }
    auto vals = parse_values(values);

    ensure_dir(out_dir);
    std::ostringstream summary;
    summary << "value,deadline_misses,hypervisor_overhead_time,utilization,error\n";
    for (std::size_t i = 0; i < vals.size(); ++i) {
        auto doc = base;
        doc[ptr] = as_string ? nlohmann::json(hex(vals[i])) : nlohmann::json(vals[i]);
        summary << vals[i] << ',';
        try {
            auto spec = load_config_json(doc);
            auto result = run(spec, Time{horizon});
            write_run_outputs(fs::path(out_dir) / ("run_" + std::to_string(i)), result, "csv");
            std::ostringstream util;
            util << std::setprecision(9) << result.metrics.utilization;
            summary << result.metrics.total_deadline_misses() << ',' << result.metrics.hypervisor_overhead_time.count()
                    << ',' << util.str() << ",\n";
        } catch (const ConfigError& e) {
            err << "value " << vals[i] << ": config error: " << e.what() << '\n';
            std::string msg = e.what();
            for (auto& c : msg) {
                if (c == ',' || c == '\n') c = ' ';
            }
            summary << ",,,config error: " << msg << '\n';
        } catch (const SimulationAborted& e) {
            err << "value " << vals[i] << ": contract violation: " << e.what() << '\n';
            summary << ",,,contract violation\n";
        }
    }
    auto path = fs::path(out_dir) / "summary.csv";
    auto f = open_out(path);
    f << summary.str();
    close_out(f, path);
    out << summary.str();
    return kExitOk;
}

int cmd_generate(std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
    auto doc = to_json(random_system(seed)).dump(2);
    if (out_dir.empty()) {
        out << doc << '\n';
        return kExitOk;
    }
    ensure_dir(out_dir);
    auto path = fs::path(out_dir) / "config.json";
    auto f = open_out(path);
    f << doc << '\n';
    close_out(f, path);
    out << "wrote " << path.string() << '\n';
    return kExitOk;
}

int cmd_check_costs(const std::string& config, double clock_mhz, std::ostream& out) {
    auto cm = config.empty() ? CostModel::defaults() : read_config(config).cost_model;
    auto report = validate_cost_model(cm, clock_mhz);
    out << "clock_mhz=" << report.clock_mhz << " tolerance=" << report.tolerance << '\n';
    out << "field,time_ns,cycles,reference_cycles,deviation,implied_clock_mhz\n";
    for (const auto& row : report.rows) {
        out << to_string(row.field) << ',' << row.time.count() << ',' << std::fixed << std::setprecision(2) << row.cycles
            << ',';
        if (row.reference_cycles) {
            out << *row.reference_cycles << ',' << std::setprecision(6) << row.deviation << ',' << std::setprecision(3)
                << *row.implied_clock_mhz;
        } else {
            out << ",,";
        }
        out << std::defaultfloat << '\n';
    }
    out << (report.consistent ? "consistent\n" : "inconsistent\n");
    return report.consistent ? kExitOk : kExitCheckFailed;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Discrete-event simulator of a partitioning hypervisor with pluggable vCPU schedulers", "tvsim"};
    app.require_subcommand(1);

    std::string config, out_dir = ".", format = "csv", key, values;
    std::uint64_t horizon = 0, seed = 0;
    double clock_mhz = kImpliedClockMhz;

    auto* run_cmd = app.add_subcommand("run", "simulate one configuration");
    run_cmd->add_option("--config", config, "JSON manifest")->required();
    run_cmd->add_option("--horizon-ns", horizon, "virtual time to simulate")->required();
    run_cmd->add_option("--out", out_dir, "output directory");
    run_cmd->add_option("--format", format, "trace format")->check(CLI::IsMember({"csv", "json"}));

    auto* sweep_cmd = app.add_subcommand("sweep", "rerun a configuration over values of one numeric field");
    sweep_cmd->add_option("--config", config, "JSON manifest")->required();
    sweep_cmd->add_option("--horizon-ns", horizon, "virtual time per run")->required();
    sweep_cmd->add_option("--sweep", key, "dotted config key, e.g. cost_model.world_switch")->required();
    sweep_cmd->add_option("--values", values, "comma-separated values")->required()->allow_extra_args(false);
    sweep_cmd->add_option("--out", out_dir, "output directory");

    auto* gen_cmd = app.add_subcommand("generate", "write a random configuration");
    gen_cmd->add_option("--seed", seed, "generator seed")->required();
    std::string gen_out;
    gen_cmd->add_option("--out", gen_out, "output directory (stdout when omitted)");

    auto* cost_cmd = app.add_subcommand("check-costs", "check a cost model against the reference cycle counts");
    cost_cmd->add_option("--config", config, "JSON manifest (defaults when omitted)");
    cost_cmd->add_option("--clock-mhz", clock_mhz, "CPU clock used for the conversion");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n' << app.help();
        return kExitConfigError;
    }

    try {
        if (*run_cmd) {
            if (horizon == 0) throw ConfigError("--horizon-ns", "horizon must be positive");
            return cmd_run(config, horizon, out_dir, format, out);
        }
        if (*sweep_cmd) {
            if (horizon == 0) throw ConfigError("--horizon-ns", "horizon must be positive");
            return cmd_sweep(config, horizon, key, values, out_dir, out, err);
        }
        if (*gen_cmd) return cmd_generate(seed, gen_out, out);
        if (*cost_cmd) {
            if (!(clock_mhz > 0.0)) throw ConfigError("--clock-mhz", "clock must be positive");
            return cmd_check_costs(config, clock_mhz, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const SimulationAborted& e) {
        err << "contract violation: " << e.what() << '\n';
        print_trace_suffix(err, e.partial_trace());
        return kExitContractViolation;
    } catch (const ContractViolation& e) {
        err << "contract violation: " << e.what() << '\n';
        return kExitContractViolation;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIoError;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIoError;
    }
    return kExitOk;
}

} // namespace tvsim
