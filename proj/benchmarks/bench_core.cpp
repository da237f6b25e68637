#include <benchmark/benchmark.h>

#include <npiv/basis.hpp>
#include <npiv/net.hpp>
#include <npiv/projector.hpp>
#include <npiv/rng.hpp>

using namespace npiv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

static void BM_SplineEval(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(mix_seed(1, 0));
    MatrixXd data = rng.normal_mat(n, 4);
    BasisSpec spec;
    spec.interactions = true;
    FittedBasis fb = FittedBasis::fit(spec, data);
    for (auto _ : state) {
        DesignMatrix dm = fb.eval(data, true);
        benchmark::DoNotOptimize(dm.values.data());
    }
}
BENCHMARK(BM_SplineEval)->Arg(1000)->Arg(5000);

static void BM_ProjectorBuild(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(mix_seed(1, 1));
    MatrixXd B = rng.normal_mat(n, 26);
    for (auto _ : state) {
        Projector proj(B);
        benchmark::DoNotOptimize(proj.rank());
    }
}
BENCHMARK(BM_ProjectorBuild)->Arg(1000)->Arg(5000);

static void BM_ProjectorApply(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(mix_seed(1, 2));
    MatrixXd B = rng.normal_mat(n, 26);
    VectorXd v = rng.normal_vec(n);
    Projector proj(B);
    for (auto _ : state) {
        VectorXd pv = proj.apply(v);
        benchmark::DoNotOptimize(pv.data());
    }
}
BENCHMARK(BM_ProjectorApply)->Arg(1000)->Arg(5000);

static void BM_NetForward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    NetSpec spec;
    spec.input_dim = 8;
    spec.hidden = {40};
    spec.act = Activation::Sigmoid;
    NetParams p = NetParams::glorot(spec, 3);
    Rng rng(mix_seed(1, 3));
    MatrixXd x = rng.normal_mat(n, 8);
    for (auto _ : state) {
        VectorXd out = net_forward(spec, p, x);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_NetForward)->Arg(1000)->Arg(5000);

static void BM_NetGradParams(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    NetSpec spec;
    spec.input_dim = 8;
    spec.hidden = {40};
    spec.act = Activation::Sigmoid;
    NetParams p = NetParams::glorot(spec, 3);
    Rng rng(mix_seed(1, 4));
    MatrixXd x = rng.normal_mat(n, 8);
    VectorXd upstream = rng.normal_vec(n);
    for (auto _ : state) {
        ForwardCache cache;
        net_forward(spec, p, x, &cache);
        NetParams g = net_grad_params(spec, p, x, upstream, cache);
        benchmark::DoNotOptimize(g.W[0].data());
    }
}
BENCHMARK(BM_NetGradParams)->Arg(1000)->Arg(5000);

BENCHMARK_MAIN();
