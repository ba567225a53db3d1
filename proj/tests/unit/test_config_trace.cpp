#include "builders.hpp"
#include "support.hpp"

#include "tvsim/config.hpp"
#include "tvsim/generator.hpp"
#include "tvsim/metrics.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace tvsim;
using namespace tvsim::testing;

namespace {

const char* kTwoVms = R"({
  "cost_model": {"hyp_call": 6580, "world_switch": 25840, "interrupt_entry_exit": 7480,
                 "virtual_interrupt": 29710, "tlb_flush": 156725, "mmio_emulation": 6580},
  "scheduler": {"name": "edf", "sched_param": [{"period_ns": 10000000, "budget_ns": 3000000},
                                               {"period_ns": 20000000, "budget_ns": 5000000}]},
  "vms": [
    {"id": 0, "regions": [{"ipa": "0x40000000", "pa": "0x40000000", "len": "0x100000", "perms": "rw"}],
     "irqs": [32], "workload": {"loop": true, "ops": [{"op": "compute", "ns": 1000000}]}},
    {"id": 1, "regions": [{"ipa": "0x40000000", "pa": "0x40100000", "len": "0x100000", "perms": "rw"}],
     "irqs": [33], "workload": {"loop": true, "ops": [{"op": "compute", "ns": 1000000}]}}
  ]
})";

nlohmann::json two_vms() { return nlohmann::json::parse(kTwoVms); }

} // namespace

TEST_SUITE("config") {

TEST_CASE("two VMs with disjoint regions and IRQs load") {
    auto spec = load_config(kTwoVms);
    CHECK(spec.vms.size() == 2);
    CHECK(spec.vms[1].regions[0].pa_base == 0x40100000);
    CHECK(spec.cost_model == CostModel::defaults());
}

TEST_CASE("PA overlap names both VMs") {
    auto j = two_vms();
    j["vms"][1]["regions"][0]["pa"] = "0x40000000";
    CHECK_THROWS_WITH_AS(load_config_json(j), doctest::Contains("PA overlap between vm0 and vm1"), ConfigError);
}

TEST_CASE("unaligned region length") {
    auto j = two_vms();
    j["vms"][0]["regions"][0]["len"] = 6000;
    CHECK_THROWS_WITH_AS(load_config_json(j), doctest::Contains("not 4KB aligned"), ConfigError);
}

TEST_CASE("IRQ assigned twice") {
    auto j = two_vms();
    j["vms"][1]["irqs"] = {32};
    CHECK_THROWS_WITH_AS(load_config_json(j), doctest::Contains("IRQ overlap"), ConfigError);
}

TEST_CASE("budget beyond period") {
    auto j = two_vms();
    j["scheduler"]["sched_param"][0]["budget_ns"] = 20000000;
    CHECK_THROWS_WITH_AS(load_config_json(j), doctest::Contains("budget exceeds period"), ConfigError);
}

TEST_CASE("unknown keys, bad JSON and zero-length compute are rejected") {
    auto j = two_vms();
    j["vms"][0]["colour"] = "red";
    CHECK_THROWS_WITH_AS(load_config_json(j), doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_AS(load_config("{not json"), ConfigError);
    auto k = two_vms();
    k["vms"][0]["workload"]["ops"][0]["ns"] = 0;
    CHECK_THROWS_AS(load_config_json(k), ConfigError);
}

TEST_CASE("unknown scheduler") {
    auto j = two_vms();
    j["scheduler"]["name"] = "lottery";
    CHECK_THROWS_WITH_AS(load_config_json(j), doctest::Contains("unknown scheduler"), ConfigError);
}

TEST_CASE("canonical JSON round-trips") {
    CHECK(load_config_json(to_json(load_config(kTwoVms))) == load_config(kTwoVms));
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto s = random_system(seed);
        CHECK(load_config_json(to_json(s)) == s);
        auto t = random_isolation_system(seed);
        CHECK(load_config_json(to_json(t)) == t);
    }
}

TEST_CASE("numbers") {
    CHECK(parse_u64("0x10", "x") == 16);
    CHECK(parse_u64(nlohmann::json(42), "x") == 42);
    CHECK(parse_u64("123", "x") == 123);
    CHECK_THROWS_AS(parse_u64("0xZZ", "x"), ConfigError);
    CHECK_THROWS_AS(parse_u64(nlohmann::json(-1), "x"), ConfigError);
    CHECK(hex(0x1c81000) == "0x1c81000");
}

}

TEST_SUITE("cost model") {

TEST_CASE("defaults") {
    auto cm = CostModel::defaults();
    CHECK(cm.hyp_call == Time::ns(6580));
    CHECK(cm.world_switch == Time::ns(25840));
    CHECK(cm.interrupt_entry_exit == Time::ns(7480));
    CHECK(cm.virtual_interrupt == Time::ns(29710));
    CHECK(cm.mmio_emulation == cm.hyp_call);
}

TEST_CASE("every reference row implies the same clock") {
    for (const auto& ref : kReferenceLatencies) {
        double mhz = static_cast<double>(ref.cycles) * 1000.0 / static_cast<double>(ref.time.count());
        CHECK(mhz == doctest::Approx(912.0).epsilon(0.001));
    }
}

TEST_CASE("cycles at 912 MHz") {
    auto rep = validate_cost_model(CostModel::defaults(), 912.0);
    CHECK(rep.consistent);
    auto row = [&](CostField f) {
        for (const auto& r : rep.rows) {
            if (r.field == f) return r;
        }
        FAIL("missing row");
        return rep.rows.front();
    };
    CHECK(row(CostField::HypCall).cycles == doctest::Approx(6000.96));
    CHECK(row(CostField::HypCall).deviation < 1e-3);
    CHECK(row(CostField::WorldSwitch).cycles == doctest::Approx(23566.08));
    auto zero = validate_cost_model(CostModel::zero(), 912.0);
    for (const auto& r : zero.rows) {
        CHECK(r.cycles == 0.0);
        CHECK_FALSE(r.reference_cycles.has_value());
    }
}

TEST_CASE("reference cycles apply only to the default latencies") {
    auto cm = CostModel::defaults();
    cm.world_switch = Time::ns(30000);
    auto rep = validate_cost_model(cm, 912.0);
    std::size_t referenced = 0;
    for (const auto& r : rep.rows) referenced += r.reference_cycles.has_value();
    CHECK(referenced == 3);
    CHECK_FALSE(validate_cost_model(CostModel::defaults(), 800.0).consistent);
}

}

TEST_SUITE("trace") {

TEST_CASE("CSV header and line format") {
    std::ostringstream os;
    write_csv(os, {TraceRecord{Time::ns(5), Actor::of(VmId{1}), "hypcall", CostField::HypCall, Time::ns(6580), "vm=vm1"}});
    CHECK(os.str() == "time_ns,actor,kind,cost_field,cost_ns,detail\n5,vm1,hypcall,hyp_call,6580,vm=vm1\n");
}

TEST_CASE("CSV round-trip and metrics recomputed from the file") {
    auto r = run(random_system(4), Time::ms(30));
    std::ostringstream os;
    write_csv(os, r.trace);
    auto parsed = parse_csv(os.str());
    CHECK(parsed == r.trace);
    CHECK(compute_metrics(parsed) == r.metrics);
    CHECK(to_json(compute_metrics(parsed)) == to_json(r.metrics));
}

TEST_CASE("JSON lines keep column order") {
    std::ostringstream os;
    write_jsonl(os, {TraceRecord{Time::ns(0), Actor::hypervisor(), "idle", std::nullopt, Time{}, "ns=3"}});
    auto line = os.str();
    CHECK(line.find("\"time_ns\"") < line.find("\"actor\""));
    CHECK(line.find("\"kind\"") < line.find("\"detail\""));
}

TEST_CASE("malformed CSV") {
    CHECK_THROWS_AS(parse_csv("nope\n1,2\n"), std::runtime_error);
}

TEST_CASE("detail lookup") {
    CHECK(detail_value("a=1;bb=two", "bb") == std::optional<std::string>("two"));
    CHECK_FALSE(detail_value("a=1", "b").has_value());
}

}

TEST_SUITE("generator") {

TEST_CASE("hyperperiod and utilization") {
    std::vector<EdfTask> t{{Time::ms(4), Time::ms(1)}, {Time::ms(10), Time::ms(5)}};
    CHECK(hyperperiod(t) == Time::ms(20));
    CHECK(utilization(t) == doctest::Approx(0.75));
    CHECK(compare_utilization_to_one(t) < 0);
}

TEST_CASE("exact-full sets sum to one and respect the period grid") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        EdfSetOptions opt;
        opt.exact_full = true;
        auto t = random_edf_set(rng, opt);
        CHECK(compare_utilization_to_one(t) == 0);
        CHECK(t.size() >= 2);
        CHECK(t.size() <= 6);
        for (const auto& task : t) {
            CHECK(task.budget <= task.period);
            CHECK(task.budget.count() % 1000 == 0);
        }
        CHECK(hyperperiod(t) <= Time::ms(100));
    }
}

TEST_CASE("random systems are valid") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        CHECK_NOTHROW(validate_system(random_system(seed)));
        CHECK_NOTHROW(validate_system(random_isolation_system(seed)));
    }
}

}
