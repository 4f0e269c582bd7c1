#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cmtf/eval.hpp"
#include "cmtf/synth.hpp"
#include "cmtf/trainer.hpp"
#include "doctest.h"
#include "support/test_helpers.hpp"

using namespace cmtf;
using cmtf::testing::rel_diff;

namespace {

bool models_identical(const FactorModel& a, const FactorModel& b) {
  if (!std::equal(a.core.stored().begin(), a.core.stored().end(),
                  b.core.stored().begin(), b.core.stored().end()))
    return false;
  if (a.factors.size() != b.factors.size()) return false;
  for (std::size_t n = 0; n < a.factors.size(); ++n)
    if (!std::equal(a.factors[n].data().begin(), a.factors[n].data().end(),
                    b.factors[n].data().begin(), b.factors[n].data().end()))
      return false;
  if (a.couplings.size() != b.couplings.size()) return false;
  for (std::size_t m = 0; m < a.couplings.size(); ++m)
    if (!std::equal(a.couplings[m].factor.data().begin(),
                    a.couplings[m].factor.data().end(),
                    b.couplings[m].factor.data().begin(),
                    b.couplings[m].factor.data().end()))
      return false;
  return true;
}

DataBundle small_bundle(std::uint64_t seed, bool with_matrix) {
  SynthSpec spec;
  spec.dims = {10, 8, 9};
  spec.ranks = {2, 2, 2};
  spec.n_entries = 300;
  spec.seed = seed;
  spec.with_matrix = with_matrix;
  return generate(spec).bundle;
}

TrainConfig small_config() {
  TrainConfig config;
  config.ranks = {2, 2, 2};
  config.seed = 17;
  config.max_epochs = 3;
  return config;
}

double model_predict(const FactorModel& m,
                     std::span<const std::uint32_t> idx) {
  std::vector<const double*> rows;
  for (std::size_t n = 0; n < idx.size(); ++n)
    rows.push_back(m.factors[n].row(idx[n]).data());
  return predict_entry(m.core, rows);
}

}  // namespace

TEST_CASE("initialize is deterministic and in range") {
  DataBundle bundle = small_bundle(1, true);
  TrainConfig config = small_config();
  FactorModel a = initialize(config, bundle);
  FactorModel b = initialize(config, bundle);
  CHECK(models_identical(a, b));

  for (double g : a.core.stored()) {
    CHECK(g >= 0.0);
    CHECK(g < 1.0);
  }
  const double bound = 1.0 / std::sqrt(2.0);
  for (const auto& f : a.factors)
    for (double v : f.data()) {
      CHECK(v >= 0.0);
      CHECK(v < bound);
    }
  for (double v : a.couplings[0].factor.data()) {
    CHECK(v >= 0.0);
    CHECK(v < bound);
  }

  config.seed = 18;
  FactorModel c = initialize(config, bundle);
  CHECK_FALSE(models_identical(a, c));
}

TEST_CASE("learning rate follows the decay law exactly") {
  DataBundle bundle = small_bundle(2, false);
  TrainConfig config = small_config();
  config.eta0 = 0.002;
  config.mu = 0.3;
  TrainState state = make_state(config, bundle);
  CHECK(state.eta == config.eta0);
  for (int t = 1; t <= 5; ++t) {
    run_epoch(state, bundle, config);
    CHECK(state.epoch == t);
    CHECK(state.eta == config.eta0 / (1.0 + config.mu * t));
  }
}

TEST_CASE("a zero learning rate changes nothing") {
  DataBundle bundle = small_bundle(3, true);
  TrainConfig config = small_config();
  config.eta0 = 0.0;
  TrainState state = make_state(config, bundle);
  FactorModel before = state.model;
  run_epoch(state, bundle, config);
  CHECK(models_identical(before, state.model));
}

TEST_CASE("single-thread training is bit-reproducible") {
  DataBundle bundle = small_bundle(4, true);
  TrainConfig config = small_config();
  config.max_epochs = 4;
  TrainResult a = train(bundle, config);
  TrainResult b = train(bundle, config);
  CHECK(models_identical(a.model, b.model));
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_rmse == b.log[i].train_rmse);
    CHECK(a.log[i].objective == b.log[i].objective);
  }
}

TEST_CASE("train RMSE decreases over early epochs on a rank-1 tensor") {
  // Exactly representable: 4x4x4 rank-1 tensor, 32 of 64 entries observed.
  std::mt19937_64 rng(60);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  double u[4], v[4], w[4];
  for (int i = 0; i < 4; ++i) {
    u[i] = dist(rng);
    v[i] = dist(rng);
    w[i] = dist(rng);
  }
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  std::vector<std::uint32_t> all(64);
  std::iota(all.begin(), all.end(), 0u);
  std::shuffle(all.begin(), all.end(), rng);
  for (int e = 0; e < 32; ++e) {
    const std::uint32_t a = all[e] / 16, b = (all[e] / 4) % 4, c = all[e] % 4;
    idx.insert(idx.end(), {a, b, c});
    vals.push_back(u[a] * v[b] * w[c]);
  }
  DataBundle bundle = make_bundle(SparseTensor({4, 4, 4}, idx, vals), {});

  TrainConfig config;
  config.ranks = {1, 1, 1};
  config.lambda_reg = 0.0;
  config.eta0 = 0.05;
  config.workers = 1;
  config.max_epochs = 5;
  config.rel_tol = 0.0;
  config.seed = 19;
  TrainResult result = train(bundle, config);
  REQUIRE(result.log.size() == 5);
  for (int t = 1; t < 5; ++t)
    CHECK(result.log[t].train_rmse < result.log[t - 1].train_rmse);
}

TEST_CASE("no coupled matrices reduces to plain Tucker SGD bit for bit") {
  DataBundle bundle = small_bundle(5, false);
  REQUIRE(bundle.matrices.empty());
  TrainConfig config = small_config();
  config.eta0 = 0.01;
  config.max_epochs = 3;

  TrainState state = make_state(config, bundle);
  for (int t = 0; t < 3; ++t) run_epoch(state, bundle, config);

  // Reference: a bare single-thread Tucker SGD loop with the same streams.
  FactorModel ref = initialize(config, bundle);
  const SparseTensor& tensor = bundle.tensor;
  std::vector<std::uint64_t> schedule = build_schedule(bundle);
  KernelWorkspace ws(ref.core);
  std::vector<const double*> rows(3);
  std::vector<std::uint32_t> counts(3);
  double eta = config.eta0;
  for (int epoch = 0; epoch < 3; ++epoch) {
    shuffle_schedule(schedule, config.seed, epoch);
    for (std::uint64_t id : schedule) {
      auto idx = tensor.index(id);
      for (int n = 0; n < 3; ++n) {
        rows[n] = ref.factors[n].row(idx[n]).data();
        counts[n] = bundle.counts.tensor[n][idx[n]];
      }
      compute_gradient_opt(tensor.value(id), ref.core, rows,
                           config.lambda_reg, counts, tensor.nnz(), ws, true);
      for (int n = 0; n < 3; ++n) {
        double* urow = ref.factors[n].row(idx[n]).data();
        for (std::size_t k = 0; k < ws.grad.rows[n].size(); ++k)
          urow[k] = urow[k] - eta * ws.grad.rows[n][k];
      }
      double* g = ref.core.stored().data();
      for (std::size_t d = 0; d < ws.grad.core.size(); ++d)
        g[d] = g[d] - eta * ws.grad.core[d];
    }
    eta = config.eta0 / (1.0 + config.mu * (epoch + 1));
  }
  CHECK(models_identical(state.model, ref));
}

TEST_CASE("every training index is visited exactly once per epoch") {
  DataBundle bundle = small_bundle(6, true);
  TrainConfig config = small_config();
  config.workers = 3;
  config.debug_count_visits = true;
  TrainState state = make_state(config, bundle);
  for (int epoch = 0; epoch < 2; ++epoch) {
    run_epoch(state, bundle, config);
    REQUIRE(state.visit_counts.size() ==
            bundle.tensor.nnz() + bundle.matrices[0].nnz());
    for (std::uint32_t c : state.visit_counts) CHECK(c == 1);
  }
}

TEST_CASE("worker chunks partition the schedule") {
  for (std::size_t n : {0UL, 1UL, 10UL, 97UL}) {
    for (int p : {1, 2, 3, 8, 13}) {
      auto chunks = worker_chunks(n, p);
      REQUIRE(chunks.size() == static_cast<std::size_t>(p));
      std::size_t covered = 0;
      CHECK(chunks.front().first == 0);
      for (std::size_t w = 0; w < chunks.size(); ++w) {
        CHECK(chunks[w].first <= chunks[w].second);
        if (w) CHECK(chunks[w].first == chunks[w - 1].second);
        covered += chunks[w].second - chunks[w].first;
      }
      CHECK(chunks.back().second == n);
      CHECK(covered == n);
    }
  }
}

TEST_CASE("scaled designated core update matches the all-chunk total") {
  // Identical factor rows and entry values make every per-entry core
  // gradient equal, so P times chunk 0 must equal the sum over all chunks.
  const int order = 3;
  const std::uint32_t dim = 12;
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> dist(0.2, 1.0);

  CoreTensor core = cmtf::testing::random_core({2, 2, 2}, rng, 0.2, 1.0);
  std::vector<FactorMatrix> factors;
  for (int n = 0; n < order; ++n) {
    std::vector<double> row{dist(rng), dist(rng)};
    std::vector<double> values;
    for (std::uint32_t i = 0; i < dim; ++i)
      values.insert(values.end(), row.begin(), row.end());
    factors.emplace_back(dim, 2, std::move(values));
  }
  FactorModel model{std::move(core), std::move(factors), {}};

  std::vector<std::uint32_t> idx;
  for (std::uint32_t e = 0; e < 12; ++e)
    idx.insert(idx.end(), {e % dim, (e * 2 + 1) % dim, (e * 3 + 2) % dim});
  std::vector<double> vals(12, 2.5);
  DataBundle bundle = make_bundle(SparseTensor({dim, dim, dim}, idx, vals), {});

  std::vector<std::uint64_t> schedule = build_schedule(bundle);
  shuffle_schedule(schedule, 123, 0);
  const int workers = 3;
  auto chunks = worker_chunks(schedule.size(), workers);

  KernelWorkspace ws(model.core);
  std::vector<const double*> rows(order);
  std::vector<std::uint32_t> counts(order);
  std::vector<std::vector<double>> chunk_sums(
      workers, std::vector<double>(model.core.stored().size(), 0.0));
  for (int w = 0; w < workers; ++w) {
    for (std::size_t i = chunks[w].first; i < chunks[w].second; ++i) {
      auto index = bundle.tensor.index(schedule[i]);
      for (int n = 0; n < order; ++n) {
        rows[n] = model.factors[n].row(index[n]).data();
        counts[n] = bundle.counts.tensor[n][index[n]];
      }
      compute_gradient_opt(bundle.tensor.value(schedule[i]), model.core, rows,
                           0.1, counts, bundle.tensor.nnz(), ws, true);
      for (std::size_t d = 0; d < ws.grad.core.size(); ++d)
        chunk_sums[w][d] += ws.grad.core[d];
    }
  }
  for (std::size_t d = 0; d < model.core.stored().size(); ++d) {
    double total = 0.0;
    for (int w = 0; w < workers; ++w) total += chunk_sums[w][d];
    CHECK(std::abs(workers * chunk_sums[0][d] - total) <= 1e-9);
  }
}

TEST_CASE("divergence raises an error naming the parameter") {
  DataBundle bundle = small_bundle(7, true);
  TrainConfig config = small_config();
  config.eta0 = 1e8;
  config.max_epochs = 20;
  CHECK_THROWS_WITH_AS(
      train(bundle, config),
      doctest::Contains("try a smaller initial learning rate"),
      DivergenceError);
}

TEST_CASE("max_epochs zero returns the finalized initial model") {
  DataBundle bundle = small_bundle(8, true);
  TrainConfig config = small_config();
  config.max_epochs = 0;
  TrainResult result = train(bundle, config);
  CHECK(result.log.empty());

  FactorModel expect = initialize(config, bundle);
  finalize_orthogonalize(expect);
  CHECK(models_identical(result.model, expect));
}

TEST_CASE("training stops once the relative RMSE change is small") {
  DataBundle bundle = small_bundle(9, false);
  TrainConfig config = small_config();
  config.max_epochs = 50;
  config.eta0 = 1e-9;  // essentially no progress per epoch
  config.rel_tol = 1e-4;
  TrainResult result = train(bundle, config);
  CHECK(result.log.size() == 2);
}

TEST_CASE("nonnegative projection: exact unit columns are a fixed point") {
  FactorModel m{CoreTensor({2, 2}, CoreStructure::DenseTucker, {1, 2, 3, 4}),
                {FactorMatrix(3, 2, {1, 0, 0, 1, 0, 0}),
                 FactorMatrix(2, 2, {0, 1, 1, 0})},
                {}};
  FactorModel before = m;
  apply_nonnegative_projection(m);
  CHECK(models_identical(before, m));
}

TEST_CASE("nonnegative projection clamps and preserves predictions") {
  std::mt19937_64 rng(62);
  const std::uint32_t dims[] = {6, 5, 4};
  const std::uint32_t ranks[] = {2, 2, 2};
  std::vector<std::pair<int, std::uint32_t>> shapes{{0, 7u}};
  FactorModel m = random_model(dims, ranks, CoreStructure::DenseTucker,
                               shapes, 1.0, rng);
  // Plant a few negatives.
  m.factors[0].row(2)[1] = -0.4;
  m.core.stored()[3] = -0.2;
  m.couplings[0].factor.row(1)[0] = -0.9;

  FactorModel clamped = m;
  for (double& v : clamped.core.stored())
    if (v < 0) v = 0;
  for (auto& f : clamped.factors)
    for (double& v : f.data())
      if (v < 0) v = 0;
  for (auto& c : clamped.couplings)
    for (double& v : c.factor.data())
      if (v < 0) v = 0;

  apply_nonnegative_projection(m);
  CHECK(m.factors[0].row(2)[1] == 0.0);

  for (std::uint32_t a = 0; a < 6; ++a)
    for (std::uint32_t b = 0; b < 5; ++b)
      for (std::uint32_t c = 0; c < 4; ++c) {
        std::vector<std::uint32_t> idx{a, b, c};
        CHECK(std::abs(model_predict(m, idx) -
                       model_predict(clamped, idx)) <= 1e-9);
      }
  for (std::uint32_t i = 0; i < 6; ++i)
    for (std::uint32_t j = 0; j < 7; ++j) {
      auto u = [&](const FactorModel& mm) {
        auto ur = mm.factors[0].row(i);
        auto vr = mm.couplings[0].factor.row(j);
        double acc = 0.0;
        for (std::size_t k = 0; k < ur.size(); ++k) acc += ur[k] * vr[k];
        return acc;
      };
      CHECK(std::abs(u(m) - u(clamped)) <= 1e-9);
    }

  for (const auto& f : m.factors)
    for (std::uint32_t k = 0; k < f.cols(); ++k) {
      double norm = 0.0;
      for (std::uint32_t i = 0; i < f.rows(); ++i)
        norm += f.row(i)[k] * f.row(i)[k];
      if (norm > 0) CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);
    }
}

TEST_CASE("nonnegative training yields nonnegative unit-column factors") {
  DataBundle bundle = small_bundle(10, true);
  TrainConfig config = small_config();
  config.nonnegative = true;
  config.max_epochs = 10;
  config.eta0 = 0.01;
  TrainResult result = train(bundle, config);

  for (double v : result.model.core.stored()) CHECK(v >= 0.0);
  for (const auto& f : result.model.factors) {
    for (double v : f.data()) CHECK(v >= 0.0);
    for (std::uint32_t k = 0; k < f.cols(); ++k) {
      double norm = 0.0;
      for (std::uint32_t i = 0; i < f.rows(); ++i)
        norm += f.row(i)[k] * f.row(i)[k];
      if (norm > 0) CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);
    }
  }
  for (const auto& c : result.model.couplings)
    for (double v : c.factor.data()) CHECK(v >= 0.0);
}

TEST_CASE("train RMSE at epoch 20 is below epoch 1 on noiseless data") {
  SynthSpec spec;
  spec.dims = {15, 15, 15};
  spec.ranks = {2, 2, 2};
  spec.n_entries = 1500;
  spec.seed = 23;
  DataBundle bundle = generate(spec).bundle;
  TrainConfig config = small_config();
  config.max_epochs = 20;
  config.rel_tol = 0.0;
  config.eta0 = 1e-3;  // small step; trend only, not per-epoch monotonicity
  TrainResult result = train(bundle, config);
  REQUIRE(result.log.size() == 20);
  CHECK(result.log[19].train_rmse < result.log[0].train_rmse);
}

TEST_CASE("nonnegative projection leaves an all-zero column alone") {
  FactorModel m{CoreTensor({2, 2}, CoreStructure::DenseTucker, {1, 2, 3, 4}),
                {FactorMatrix(3, 2, {0.0, 3.0, 0.0, 4.0, 0.0, 0.0}),
                 FactorMatrix(2, 2, {1, 0, 0, 1})},
                {}};
  apply_nonnegative_projection(m);
  // Column 1 of factor 1 was all zeros and must stay that way, unnormalized.
  CHECK(m.factors[0].row(0)[0] == 0.0);
  CHECK(m.factors[0].row(1)[0] == 0.0);
  CHECK(m.factors[0].row(2)[0] == 0.0);
  // The nonzero column is normalized: norm was 5.
  CHECK(m.factors[0].row(0)[1] == doctest::Approx(0.6));
  CHECK(m.factors[0].row(1)[1] == doctest::Approx(0.8));
  // Its scale moved into the core's matching slice.
  CHECK(m.core.stored()[2] == doctest::Approx(15.0));
  CHECK(m.core.stored()[3] == doctest::Approx(20.0));
}

TEST_CASE("parallel training stays sane") {
  DataBundle bundle = small_bundle(11, true);
  TrainConfig config = small_config();
  config.workers = 2;
  config.max_epochs = 8;
  config.eta0 = 0.01;
  TrainResult result = train(bundle, config);
  REQUIRE(result.log.size() >= 2);
  CHECK(result.log.back().train_rmse < result.log.front().train_rmse);
  for (double v : result.model.core.stored()) CHECK(std::isfinite(v));
}

TEST_CASE("order-2 tensors train as coupled matrix factorization") {
  SynthSpec spec;
  spec.dims = {25, 18};
  spec.ranks = {3, 3};
  spec.n_entries = 220;
  spec.seed = 14;
  spec.coupled_mode = 1;
  DataBundle bundle = generate(spec).bundle;
  REQUIRE(bundle.tensor.order() == 2);

  TrainConfig config;
  config.ranks = {3, 3};
  config.eta0 = 0.02;
  config.max_epochs = 40;
  config.rel_tol = 0.0;
  config.seed = 14;
  TrainResult result = train(bundle, config);
  REQUIRE(result.log.size() == 40);
  CHECK(result.log.back().train_rmse < 0.5 * result.log.front().train_rmse);
  for (const auto& f : result.model.factors)
    for (double v : f.data()) CHECK(std::isfinite(v));
}

TEST_CASE("CP training keeps the superdiagonal structure") {
  DataBundle bundle = small_bundle(12, true);
  TrainConfig config = small_config();
  config.core_structure = CoreStructure::HyperDiagonalCp;
  config.max_epochs = 5;
  TrainResult result = train(bundle, config);
  // After QR finalization the core is dense but only J^N values exist.
  CHECK(result.model.core.structure() == CoreStructure::DenseTucker);
  CHECK(result.model.core.stored().size() == 8);
  for (double v : result.model.core.stored()) CHECK(std::isfinite(v));
}

TEST_CASE("config validation rejects bad shapes") {
  DataBundle bundle = small_bundle(13, false);
  TrainConfig config = small_config();
  config.ranks = {2, 2};
  CHECK_THROWS_AS(validate_config(config, bundle), ValidationError);
  config.ranks = {2, 2, 2};
  config.workers = 0;
  CHECK_THROWS_AS(validate_config(config, bundle), ValidationError);
  config.workers = 1;
  config.ranks = {11, 2, 2};  // exceeds dim 10
  CHECK_THROWS_AS(validate_config(config, bundle), ValidationError);
  config.ranks = {2, 3, 2};
  config.core_structure = CoreStructure::HyperDiagonalCp;
  CHECK_THROWS_AS(validate_config(config, bundle), ValidationError);
}
