#include <benchmark/benchmark.h>

#include "adalora/adapters.hpp"
#include "adalora/allocator.hpp"
#include "adalora/tape.hpp"
#include "adalora/task.hpp"
#include "adalora/trainer.hpp"

using namespace adalora;

static void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    SplitMix64 rng(1);
    const Matrix a = rng.gaussian_matrix(n, n, 1.0);
    const Matrix b = rng.gaussian_matrix(n, n, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(32)->Arg(64);

static void BM_ModelForward(benchmark::State& state) {
    SplitMix64 rng(2);
    ToyModel model = make_base_model(4, 32, 4, 64, rng);
    SplitMix64 rng2(3);
    attach_svd_adapters(model, 4, 16.0, rng2);
    const Matrix x = rng.gaussian_matrix(8, 32, 1.0);
    for (auto _ : state) {
        Tape tape;
        ModelNodes nodes = register_model(tape, model);
        benchmark::DoNotOptimize(tape.value(model_forward(tape, model, nodes, tape.constant(x))));
    }
}
BENCHMARK(BM_ModelForward);

static void BM_ForwardBackward(benchmark::State& state) {
    SplitMix64 rng(4);
    ToyModel model = make_base_model(4, 32, 4, 64, rng);
    SplitMix64 rng2(5);
    attach_svd_adapters(model, 4, 16.0, rng2);
    const Matrix x = rng.gaussian_matrix(8, 32, 1.0);
    const Matrix target = rng.gaussian_matrix(8, 32, 1.0);
    for (auto _ : state) {
        Tape tape;
        ModelNodes nodes = register_model(tape, model);
        NodeRef loss = tape.mse_loss(model_forward(tape, model, nodes, tape.constant(x)), target);
        benchmark::DoNotOptimize(tape.backward(loss));
    }
}
BENCHMARK(BM_ForwardBackward);

static void BM_TrainStep(benchmark::State& state) {
    TaskSpec spec;
    spec.planted_ranks.assign(24, 0);
    spec.planted_ranks[4] = 2;
    spec.train_count = 32;
    spec.test_count = 4;
    const GeneratedTask task = gen_task(spec);
    TrainConfig cfg;
    cfg.schedule.b0 = 96;
    cfg.schedule.bT = 64;
    cfg.schedule.ti = 100;
    cfg.schedule.tf = 100;
    cfg.schedule.total_steps = 1 << 20;
    Trainer trainer(cfg, task);
    std::int64_t t = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(trainer.train_step(++t));
    }
}
BENCHMARK(BM_TrainStep);

static void BM_BudgetSchedule(benchmark::State& state) {
    BudgetSchedule s;
    s.b0 = 96;
    s.bT = 64;
    s.ti = 500;
    s.tf = 500;
    s.total_steps = 3000;
    std::int64_t t = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(budget_at(s, t % 3001));
        ++t;
    }
}
BENCHMARK(BM_BudgetSchedule);

static void BM_GlobalPrune(benchmark::State& state) {
    SplitMix64 rng(6);
    std::vector<TripletScore> scores;
    for (int k = 0; k < 24; ++k)
        for (int i = 0; i < 4; ++i) scores.push_back({k, i, std::fabs(rng.normal())});
    for (auto _ : state) {
        benchmark::DoNotOptimize(select_top(scores, 64));
    }
}
BENCHMARK(BM_GlobalPrune);

BENCHMARK_MAIN();
