#include <benchmark/benchmark.h>

#include <vector>

#include "latplan/common/rng.hpp"
#include "latplan/domains.hpp"
#include "latplan/models.hpp"
#include "latplan/strips.hpp"
#include "latplan/validate.hpp"

using namespace latplan;

namespace {

ad::Matrix random_matrix(int rows, int cols, Rng& rng) {
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// One action per (button, values of the pressed plus).
std::vector<strips::GroundAction> lights_out_actions(int n) {
  std::vector<strips::GroundAction> out;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      std::vector<int> cells{r * n + c};
      if (r > 0) cells.push_back((r - 1) * n + c);
      if (r + 1 < n) cells.push_back((r + 1) * n + c);
      if (c > 0) cells.push_back(r * n + c - 1);
      if (c + 1 < n) cells.push_back(r * n + c + 1);
      for (int v = 0; v < (1 << cells.size()); ++v) {
        strips::GroundAction a;
        a.name = "p" + std::to_string(r * n + c) + "-" + std::to_string(v);
        for (std::size_t k = 0; k < cells.size(); ++k) {
          if ((v >> k) & 1) {
            a.pos.push_back(cells[k]);
            a.del.push_back(cells[k]);
          } else {
            a.neg.push_back(cells[k]);
            a.add.push_back(cells[k]);
          }
        }
        a.pos = strips::normalized(a.pos);
        a.neg = strips::normalized(a.neg);
        a.add = strips::normalized(a.add);
        a.del = strips::normalized(a.del);
        out.push_back(a);
      }
    }
  }
  return out;
}

models::ModelConfig desk_model(models::ModelKind kind) {
  models::ModelConfig mc;
  mc.kind = kind;
  mc.image = {1, 27, 27};
  mc.latent.F = 36;
  mc.latent.A = 128;
  mc.arch.style = "mlp";
  return mc;
}

}  // namespace

static void BM_LinearForwardBackward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  Rng rng(1);
  auto w = ad::parameter(random_matrix(729, 256, rng));
  auto b = ad::parameter(random_matrix(1, 256, rng));
  const auto x = ad::constant(random_matrix(batch, 729, rng));
  for (auto _ : state) {
    w.zero_grad();
    b.zero_grad();
    auto loss = ad::sum(ad::relu(ad::linear(x, w, b)));
    ad::backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_LinearForwardBackward)->Arg(25)->Arg(100)->Arg(400);

static void BM_LossBackward(benchmark::State& state) {
  const auto kind = static_cast<models::ModelKind>(state.range(0));
  const int batch = static_cast<int>(state.range(1));
  auto model = models::make_model(desk_model(kind), 1);
  Rng rng(2);
  const auto x0 = random_matrix(batch, 729, rng);
  const auto x1 = random_matrix(batch, 729, rng);
  for (auto _ : state) {
    for (auto& p : model->parameters()) p.var.zero_grad();
    nn::ForwardContext ctx{true, &rng, nullptr};
    auto r = model->loss(x0, x1, 1.0, ctx, models::Sampling::stochastic);
    ad::backward(r.total);
    benchmark::DoNotOptimize(r.parts.total);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_LossBackward)
    ->Args({static_cast<int>(models::ModelKind::sae), 100})
    ->Args({static_cast<int>(models::ModelKind::csae), 100})
    ->Args({static_cast<int>(models::ModelKind::bicsae), 25})
    ->Args({static_cast<int>(models::ModelKind::bicsae), 100})
    ->Unit(benchmark::kMillisecond);

static void BM_EncodeBits(benchmark::State& state) {
  auto model = models::make_model(desk_model(models::ModelKind::sae), 1);
  auto& sae = dynamic_cast<models::StateAutoencoder&>(*model);
  Rng rng(3);
  const auto x = random_matrix(256, 729, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sae.encode_bits(x).data());
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_EncodeBits)->Unit(benchmark::kMillisecond);

static void BM_BtlEvalBits(benchmark::State& state) {
  Rng rng(4);
  nn::BackToLogit btl("apply", 36, 128, rng);
  std::vector<int> z(36);
  for (auto& b : z) b = static_cast<int>(rng.below(2));
  int label = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(btl.eval_bits(z, label).data());
    label = (label + 1) % 128;
  }
}
BENCHMARK(BM_BtlEvalBits);

static void BM_BlindAstarLightsOut(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  strips::PlanningProblem p;
  p.F = n * n;
  p.actions = lights_out_actions(n);
  p.init = strips::State(p.F);
  Rng rng(5);
  for (int f = 0; f < p.F; ++f) p.init.set(f, rng.below(2) == 1);
  for (int f = 0; f < p.F; ++f) p.goal_neg.push_back(f);
  std::int64_t expansions = 0;
  for (auto _ : state) {
    const auto r = strips::astar(p, strips::Heuristic::blind, {10'000'000, 0.0});
    expansions += r.expansions;
    benchmark::DoNotOptimize(r.plan.data());
  }
  state.counters["expansions/s"] = benchmark::Counter(static_cast<double>(expansions), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_BlindAstarLightsOut)->Arg(3)->Arg(4)->Unit(benchmark::kMillisecond);

static void BM_PddlRoundTrip(benchmark::State& state) {
  strips::Domain d;
  d.F = 25;
  d.actions = lights_out_actions(5);
  std::size_t bytes = 0;
  for (auto _ : state) {
    const auto text = strips::emit_domain(d);
    bytes += text.size();
    benchmark::DoNotOptimize(strips::parse_domain(text).actions.size());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_PddlRoundTrip)->Unit(benchmark::kMillisecond);

static void BM_RenderAndValidate(benchmark::State& state) {
  domains::DomainSpec spec;
  spec.kind = static_cast<domains::DomainKind>(state.range(0));
  const auto domain = domains::make_domain(spec);
  const auto validator = validate::make_validator(*domain);
  Rng rng(6);
  for (auto _ : state) {
    const auto image = domain->render(domain->sample_state(rng));
    benchmark::DoNotOptimize(validator->parse(image).valid);
  }
}
BENCHMARK(BM_RenderAndValidate)
    ->Arg(static_cast<int>(domains::DomainKind::lights_out))
    ->Arg(static_cast<int>(domains::DomainKind::twisted_lights_out))
    ->Arg(static_cast<int>(domains::DomainKind::sliding_tile))
    ->Arg(static_cast<int>(domains::DomainKind::hanoi));

BENCHMARK_MAIN();
