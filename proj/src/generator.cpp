#include "tvsim/generator.hpp"

#include "tvsim/schedulers.hpp"
#include "tvsim/vgic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tvsim {

double utilization(std::span<const EdfTask> tasks) {
    double u = 0.0;
    for (const auto& t : tasks) u += static_cast<double>(t.budget.count()) / static_cast<double>(t.period.count());
    return u;
}

Time hyperperiod(std::span<const EdfTask> tasks) {
    std::uint64_t h = 1;
    for (const auto& t : tasks) h = std::lcm(h, t.period.count());
    return Time{h};
}

int compare_utilization_to_one(std::span<const EdfTask> tasks) {
    // sum(b_i * H / p_i) against H, in integers.
    auto h = hyperperiod(tasks).count();
    Time sum;
    for (const auto& t : tasks) sum += t.budget * (h / t.period.count());
    if (sum < Time{h}) return -1;
    return sum == Time{h} ? 0 : 1;
}

namespace {

std::vector<double> uunifast(std::mt19937_64& rng, std::size_t n, double total) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> out;
    double rest = total;
    for (std::size_t i = 1; i < n; ++i) {
        double next = rest * std::pow(unit(rng), 1.0 / static_cast<double>(n - i));
        out.push_back(rest - next);
        rest = next;
    }
    out.push_back(rest);
    return out;
}

} // namespace

std::vector<EdfTask> random_edf_set(std::mt19937_64& rng, const EdfSetOptions& opt) {
    if (opt.min_vms == 0 || opt.min_vms > opt.max_vms || opt.granularity == Time{}) {
        throw std::invalid_argument("bad EDF set options");
    }
    std::uniform_int_distribution<std::size_t> count(opt.min_vms, opt.max_vms);
    std::uniform_int_distribution<std::size_t> period_pick(0, kPeriodChoicesMs.size() - 1);
    std::uniform_real_distribution<double> util(opt.min_util, opt.max_util);
    const auto g = opt.granularity.count();

    for (;;) {
        auto n = count(rng);
        std::vector<EdfTask> tasks(n);
        for (auto& t : tasks) t.period = Time::ms(kPeriodChoicesMs[period_pick(rng)]);
        double total = opt.exact_full ? 1.0 : util(rng);
        auto shares = uunifast(rng, n, total);
        if (std::any_of(shares.begin(), shares.end(), [](double u) { return u > 1.0; })) continue;

        if (opt.exact_full) {
            // The set of periods is closed under lcm, so one VM can take the
            // hyperperiod and absorb the rounding slack exactly.
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            tasks[pick(rng)].period = hyperperiod(tasks);
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto p = tasks[i].period.count();
            auto b = static_cast<std::uint64_t>(shares[i] * static_cast<double>(p)) / g * g;
            tasks[i].budget = Time{std::clamp<std::uint64_t>(b, g, p)};
        }
        if (opt.exact_full) {
            auto h = hyperperiod(tasks).count();
            auto big = std::find_if(tasks.begin(), tasks.end(), [h](const EdfTask& t) { return t.period.count() == h; });
            std::uint64_t used = 0;
            for (const auto& t : tasks) {
                if (&t != &*big) used += t.budget.count() * (h / t.period.count());
            }
            if (used >= h || (h - used) % g != 0) continue;
            big->budget = Time{h - used};
        }
        return tasks;
    }
}

SystemSpec make_edf_system(std::span<const EdfTask> tasks, const CostModel& cm) {
    SystemSpec spec;
    spec.cost_model = cm;
    spec.scheduler.name = "edf";
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        VmSpec vm;
        vm.id = VmId{static_cast<std::uint32_t>(i)};
        vm.regions.push_back(MemRegion{0x40000000, 0x80000000 + i * 0x100000, 0x100000, {true, true}});
        vm.sched_param = to_json(EdfParam{tasks[i].period, tasks[i].budget});
        vm.workload = Workload{{op::Compute{Time::ms(1000)}}, true};
        spec.vms.push_back(std::move(vm));
    }
    return spec;
}

SystemSpec random_system(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    EdfSetOptions opt;
    opt.min_vms = 2;
    opt.max_vms = 4;
    opt.min_util = 0.3;
    opt.max_util = 0.9;
    auto tasks = random_edf_set(rng, opt);
    auto spec = make_edf_system(tasks, CostModel::defaults());

    std::uniform_int_distribution<std::uint64_t> compute_us(50, 2000);
    std::uniform_int_distribution<int> coin(0, 1);
    const auto n = spec.vms.size();

    spec.shared_pages.push_back(SharedPage{0, 0x90000000});
    for (std::uint32_t side = 0; side < 2; ++side) {
        spec.vms[side].shared.push_back(SharedMapping{0, 0x50000000, {true, true}});
        spec.vms[side].virqs.push_back(100 + side);
    }
    spec.channels.push_back(ChannelSpec{0, {VmId{0}, VmId{1}}, {0}, {100, 101},
                                        coin(rng) ? IvcVariant::HypcallGated : IvcVariant::FreeAccess});

    for (std::size_t i = 0; i < n; ++i) {
        auto& vm = spec.vms[i];
        auto irq = static_cast<std::uint32_t>(32 + i);
        vm.irqs.push_back(irq);
        std::uniform_int_distribution<std::uint64_t> period_us(500, 20000);
        spec.irq_events.push_back(IrqEventSpec{irq, Time::us(period_us(rng)), Time::us(period_us(rng)), std::nullopt});

        auto& ops = vm.workload.ops;
        ops.clear();
        ops.push_back(op::Compute{Time::us(compute_us(rng))});
        ops.push_back(op::HypCall{});
        ops.push_back(op::Mmio{0x40000000 + 0x1000 * i, Access::Write, 1});
        ops.push_back(op::Mmio{spec.platform.gicd_base + gicd::kIsenabler + 4, Access::Read, 0});
        if (i < 2) {
            ops.push_back(op::IvcAcquire{0});
            ops.push_back(op::IvcWrite{0, 512});
            ops.push_back(op::IvcRelease{0});
            ops.push_back(op::IvcNotify{0});
        }
        ops.push_back(op::Compute{Time::us(compute_us(rng))});
        if (coin(rng)) ops.push_back(op::Wfi{});
        vm.workload.loop = true;
    }
    return spec;
}

} // namespace tvsim
