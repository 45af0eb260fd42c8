// Copyright 2026 The romtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Serial reference schedule against the OpenMP one for the two hot loops:
// batched evaluation rollouts and one PO iteration (m two-point samples).
// Both schedules produce bit-identical results; only wall time differs.

#include <benchmark/benchmark.h>

#include "romtune/harness.hpp"

namespace romtune {
namespace {

struct Fixture {
  Preset preset = builtin_preset("p2");
  Rom rom;
  Policy policy;

  Fixture() {
    const SnapshotSet s = collect_excited_trajectory(
        preset.env, preset.dmdc.snapshots, preset.dmdc.excitation_stddev(), 1);
    rom = dmdc_fit(s, preset.dmdc.rank, preset.dmdc.reduced_dim);
    policy = Policy::from(design_lqt(preset.env, rom).gains);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Execution schedule(const benchmark::State& state) {
  return state.range(0) ? Execution::kParallel : Execution::kSerial;
}

void BM_EvaluateRollouts(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) {
    const CostEstimate est = evaluate_policy_cost(f.preset.env, f.rom, f.policy, 16, 3,
                                                  1e8, schedule(state));
    benchmark::DoNotOptimize(est.mean);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}

void BM_TrainIteration(benchmark::State& state) {
  const Fixture& f = fixture();
  TrainConfig tc = f.preset.train;
  tc.iterations = 1;
  tc.execution = schedule(state);
  for (auto _ : state) {
    const TrainResult r = train(f.preset.env, f.rom, f.policy, tc);
    benchmark::DoNotOptimize(r.policy.gains.data());
  }
}

BENCHMARK(BM_EvaluateRollouts)->ArgName("parallel")->Arg(0)->Arg(1)->UseRealTime()
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainIteration)->ArgName("parallel")->Arg(0)->Arg(1)->UseRealTime()
    ->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace romtune

BENCHMARK_MAIN();
