#include <benchmark/benchmark.h>

#include <random>

#include "msmiv/dgp.hpp"
#include "msmiv/estimators.hpp"
#include "msmiv/kernels.hpp"
#include "msmiv/rng.hpp"

using namespace msmiv;

namespace {

struct Rows {
  Eigen::MatrixXd R;
  Eigen::VectorXd w;
  std::vector<std::int32_t> cell;
  std::vector<std::uint8_t> arm;
  Rows(int n, int m, int cells) : R(n, m), w(n), cell(n), arm(n) {
    CounterRng rng(1, 0);
    std::normal_distribution<double> nd;
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < m; ++c) R(i, c) = nd(rng);
      w[i] = rng.uniform();
      cell[i] = static_cast<std::int32_t>(rng() % static_cast<unsigned>(cells));
      arm[i] = static_cast<std::uint8_t>(rng() & 1u);
    }
  }
};

ExecPolicy policy(const benchmark::State& st) { return st.range(1) ? ExecPolicy::parallel : ExecPolicy::serial; }

void BM_accumulate_cells(benchmark::State& st) {
  const Rows r(static_cast<int>(st.range(0)), 6, 64);
  for (auto _ : st)
    benchmark::DoNotOptimize(accumulate_cells(policy(st), r.cell, r.arm, 64, 2, r.w, r.R));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_weighted_gram(benchmark::State& st) {
  const Rows r(static_cast<int>(st.range(0)), 8, 1);
  for (auto _ : st) benchmark::DoNotOptimize(weighted_gram(policy(st), r.R, r.w));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_simulate(benchmark::State& st) {
  const DgpSpec spec = DgpSpec::load(std::string(MSMIV_DATA_DIR) + "/desk_dgp.json");
  for (auto _ : st) benchmark::DoNotOptimize(simulate(spec, static_cast<int>(st.range(0)), 5));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_fit_iv_mr(benchmark::State& st) {
  const DgpSpec spec = DgpSpec::load(std::string(MSMIV_DATA_DIR) + "/desk_dgp.json");
  const Panel panel = simulate(spec, static_cast<int>(st.range(0)), 5);
  FitContext ctx(panel, MisspecPattern::preset("all_correct"), {}, policy(st));
  const MsmSpec msm = MsmSpec::default_for(1);
  for (auto _ : st) benchmark::DoNotOptimize(estimate(EstimatorId::iv_mr, make_problem(ctx, msm), false));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

// range(1): 0 serial reference, 1 OpenMP
BENCHMARK(BM_accumulate_cells)->ArgsProduct({{10000, 200000}, {0, 1}});
BENCHMARK(BM_weighted_gram)->ArgsProduct({{10000, 200000}, {0, 1}});
BENCHMARK(BM_simulate)->Arg(20000);
BENCHMARK(BM_fit_iv_mr)->ArgsProduct({{20000}, {0, 1}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
