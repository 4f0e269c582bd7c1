#include "cmtf/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>

#include "cmtf/eval.hpp"
#include "cmtf/relaxed.hpp"
#include "cmtf/rng.hpp"

namespace cmtf {

void write_log_csv(std::ostream& out, const ConvergenceLog& log) {
  out << "epoch,train_rmse,objective,seconds\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.6f\n", e.epoch,
                  e.train_rmse, e.objective, e.seconds);
    out << buf;
  }
}

FactorModel random_model(
    std::span<const std::uint32_t> dims, std::span<const std::uint32_t> ranks,
    CoreStructure structure,
    const std::vector<std::pair<int, std::uint32_t>>& coupling_shapes,
    double scale, std::mt19937_64& rng) {
  CoreTensor core = CoreTensor::zeros(
      std::vector<std::uint32_t>(ranks.begin(), ranks.end()), structure);
  for (double& g : core.stored()) g = uniform(rng, 0.0, scale);

  std::vector<FactorMatrix> factors;
  factors.reserve(dims.size());
  for (std::size_t n = 0; n < dims.size(); ++n) {
    FactorMatrix f = FactorMatrix::zeros(dims[n], ranks[n]);
    const double hi = scale / std::sqrt(static_cast<double>(ranks[n]));
    for (double& v : f.data()) v = uniform(rng, 0.0, hi);
    factors.push_back(std::move(f));
  }

  std::vector<Coupling> couplings;
  couplings.reserve(coupling_shapes.size());
  for (const auto& [mode, cols] : coupling_shapes) {
    FactorMatrix f = FactorMatrix::zeros(cols, ranks[mode]);
    const double hi = scale / std::sqrt(static_cast<double>(ranks[mode]));
    for (double& v : f.data()) v = uniform(rng, 0.0, hi);
    couplings.push_back(Coupling{mode, std::move(f)});
  }
  return FactorModel{std::move(core), std::move(factors),
                     std::move(couplings)};
}

void validate_config(const TrainConfig& config, const DataBundle& bundle) {
  const auto& dims = bundle.tensor.dims();
  if (config.ranks.size() != dims.size())
    throw ValidationError("rank list has " +
                          std::to_string(config.ranks.size()) +
                          " entries for a tensor of order " +
                          std::to_string(dims.size()));
  for (std::uint32_t j : config.ranks)
    if (j == 0) throw ValidationError("ranks must be positive");
  if (config.core_structure == CoreStructure::HyperDiagonalCp)
    for (std::uint32_t j : config.ranks)
      if (j != config.ranks[0])
        throw ValidationError("CP mode requires equal ranks on every mode");
  if (!config.nonnegative)
    for (std::size_t n = 0; n < dims.size(); ++n)
      if (config.ranks[n] > dims[n])
        throw ValidationError(
            "rank of mode " + std::to_string(n + 1) +
            " exceeds its size; orthogonalization needs J_n <= I_n");
  if (bundle.tensor.nnz() == 0)
    throw ValidationError("training tensor has no entries");
  if (!(config.eta0 >= 0)) throw ValidationError("eta0 must be nonnegative");
  if (!(config.mu >= 0)) throw ValidationError("mu must be nonnegative");
  if (!(config.lambda_reg >= 0))
    throw ValidationError("lambda_reg must be nonnegative");
  if (config.workers < 1) throw ValidationError("workers must be >= 1");
  if (config.max_epochs < 0)
    throw ValidationError("max_epochs must be nonnegative");
  if (!(config.rel_tol >= 0))
    throw ValidationError("rel_tol must be nonnegative");
  if (!(config.init_scale > 0))
    throw ValidationError("init_scale must be positive");
}

FactorModel initialize(const TrainConfig& config, const DataBundle& bundle) {
  validate_config(config, bundle);
  std::vector<std::pair<int, std::uint32_t>> shapes;
  shapes.reserve(bundle.matrices.size());
  for (const auto& m : bundle.matrices)
    shapes.emplace_back(m.coupled_mode(), m.cols());
  auto rng = make_rng(config.seed, RngStream::Init);
  return random_model(bundle.tensor.dims(), config.ranks,
                      config.core_structure, shapes, config.init_scale, rng);
}

std::vector<std::pair<std::size_t, std::size_t>> worker_chunks(std::size_t n,
                                                               int workers) {
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  chunks.reserve(workers);
  for (int w = 0; w < workers; ++w)
    chunks.emplace_back(n * w / workers, n * (w + 1) / workers);
  return chunks;
}

std::vector<std::uint64_t> build_schedule(const DataBundle& bundle) {
  std::size_t total = bundle.tensor.nnz();
  for (const auto& m : bundle.matrices) total += m.nnz();
  std::vector<std::uint64_t> schedule(total);
  for (std::size_t i = 0; i < total; ++i) schedule[i] = i;
  return schedule;
}

void shuffle_schedule(std::vector<std::uint64_t>& schedule, std::uint64_t seed,
                      int epoch) {
  auto rng = make_rng(seed, RngStream::Shuffle,
                      static_cast<std::uint64_t>(epoch));
  for (std::size_t i = schedule.size(); i > 1; --i)
    std::swap(schedule[i - 1], schedule[bounded(rng, i)]);
}

TrainState make_state(const TrainConfig& config, const DataBundle& bundle) {
  TrainState state{initialize(config, bundle), 0, 0.0, {}, {}, {}};
  state.eta = config.eta0;
  state.schedule = build_schedule(bundle);
  if (config.debug_count_visits)
    state.visit_counts.assign(state.schedule.size(), 0);
  return state;
}

namespace {

struct MatrixLocator {
  std::vector<std::uint64_t> offsets;  // cumulative, offsets[0] = tensor nnz

  explicit MatrixLocator(const DataBundle& bundle) {
    offsets.push_back(bundle.tensor.nnz());
    for (const auto& m : bundle.matrices)
      offsets.push_back(offsets.back() + m.nnz());
  }

  // id >= tensor nnz; returns (matrix index, entry index)
  std::pair<std::size_t, std::size_t> locate(std::uint64_t id) const {
    std::size_t m = 0;
    while (id >= offsets[m + 1]) ++m;
    return {m, static_cast<std::size_t>(id - offsets[m])};
  }
};

void bump_visit(std::uint32_t& slot) {
  std::atomic_ref<std::uint32_t>(slot).fetch_add(1,
                                                 std::memory_order_relaxed);
}

// One worker's pass over its chunk of the shuffled schedule. Factor rows
// are updated by whichever workers touch them (races tolerated); the core
// is written only by the designated worker, scaled by the worker count.
void sweep(TrainState& state, const DataBundle& bundle,
           const TrainConfig& config, const MatrixLocator& locator,
           std::size_t lo, std::size_t hi, bool designated, int scale) {
  FactorModel& model = state.model;
  const SparseTensor& tensor = bundle.tensor;
  const std::size_t tensor_nnz = tensor.nnz();
  const int order = tensor.order();
  const double eta = state.eta;
  const double lambda_reg = config.lambda_reg;
  const bool nonneg = config.nonnegative;
  const bool count_visits = !state.visit_counts.empty();

  KernelWorkspace ws(model.core);
  MatrixEntryGradient mg;
  std::vector<const double*> rows(order);
  std::vector<std::uint32_t> counts(order);

  auto step = [&](double* dst, double g) {
    double v = relaxed_load(*dst) - eta * g;
    if (nonneg && v < 0) v = 0;
    relaxed_store(*dst, v);
  };

  for (std::size_t i = lo; i < hi; ++i) {
    const std::uint64_t id = state.schedule[i];
    if (count_visits) bump_visit(state.visit_counts[id]);

    if (id < tensor_nnz) {
      const auto idx = tensor.index(id);
      for (int n = 0; n < order; ++n) {
        rows[n] = model.factors[n].row(idx[n]).data();
        counts[n] = bundle.counts.tensor[n][idx[n]];
      }
      if (config.kernel == GradientKernel::Naive)
        compute_gradient(tensor.value(id), model.core, rows, lambda_reg,
                         counts, tensor_nnz, ws, designated);
      else
        compute_gradient_opt(tensor.value(id), model.core, rows, lambda_reg,
                             counts, tensor_nnz, ws, designated);

      for (int n = 0; n < order; ++n) {
        double* u = model.factors[n].row(idx[n]).data();
        const std::vector<double>& g = ws.grad.rows[n];
        for (std::size_t k = 0; k < g.size(); ++k) step(u + k, g[k]);
      }
      if (designated) {
        double* g = model.core.stored().data();
        const double eta_p = eta * scale;
        for (std::size_t d = 0; d < ws.grad.core.size(); ++d) {
          double v = relaxed_load(g[d]) - eta_p * ws.grad.core[d];
          if (nonneg && v < 0) v = 0;
          relaxed_store(g[d], v);
        }
      }
    } else {
      const auto [m, e] = locator.locate(id);
      const CoupledMatrix& mat = bundle.matrices[m];
      const std::uint32_t j1 = mat.row_index(e);
      const std::uint32_t j2 = mat.col_index(e);
      double* u = model.factors[mat.coupled_mode()].row(j1).data();
      double* v = model.couplings[m].factor.row(j2).data();
      const std::size_t width = model.couplings[m].factor.cols();
      matrix_entry_gradients(mat.value(e), {u, width}, {v, width},
                             mat.weight(), lambda_reg,
                             bundle.counts.matrix_cols[m][j2], mg);
      for (std::size_t k = 0; k < width; ++k) {
        step(u + k, mg.du[k]);
        step(v + k, mg.dv[k]);
      }
    }
  }
}

// Name the first non-finite parameter, if any.
std::string find_non_finite(const FactorModel& model) {
  auto scan = [](std::span<const double> v) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!std::isfinite(v[i])) return static_cast<std::ptrdiff_t>(i);
    return -1;
  };
  if (auto i = scan(model.core.stored()); i >= 0)
    return "core element " + std::to_string(i + 1);
  for (std::size_t n = 0; n < model.factors.size(); ++n)
    if (auto i = scan(model.factors[n].data()); i >= 0) {
      const std::uint32_t cols = model.factors[n].cols();
      return "factor " + std::to_string(n + 1) + ", row " +
             std::to_string(i / cols + 1) + ", column " +
             std::to_string(i % cols + 1);
    }
  for (std::size_t m = 0; m < model.couplings.size(); ++m)
    if (auto i = scan(model.couplings[m].factor.data()); i >= 0) {
      const std::uint32_t cols = model.couplings[m].factor.cols();
      return "coupled factor " + std::to_string(m + 1) + ", row " +
             std::to_string(i / cols + 1) + ", column " +
             std::to_string(i % cols + 1);
    }
  return {};
}

}  // namespace

void run_epoch(TrainState& state, const DataBundle& bundle,
               const TrainConfig& config) {
  const MatrixLocator locator(bundle);
  if (state.schedule.size() != locator.offsets.back())
    state.schedule = build_schedule(bundle);
  shuffle_schedule(state.schedule, config.seed, state.epoch);

  if (config.debug_count_visits)
    state.visit_counts.assign(state.schedule.size(), 0);

  const int workers = config.workers;
  const auto chunks = worker_chunks(state.schedule.size(), workers);
  if (workers == 1) {
    sweep(state, bundle, config, locator, chunks[0].first, chunks[0].second,
          true, 1);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (int w = 1; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          sweep(state, bundle, config, locator, chunks[w].first,
                chunks[w].second, false, workers);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    try {
      sweep(state, bundle, config, locator, chunks[0].first, chunks[0].second,
            true, workers);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  state.epoch += 1;
  state.eta = config.eta0 / (1.0 + config.mu * state.epoch);

  if (std::string offender = find_non_finite(state.model); !offender.empty())
    throw DivergenceError("non-finite parameter after epoch " +
                          std::to_string(state.epoch) + ": " + offender +
                          "; try a smaller initial learning rate");
}

TrainResult train(const DataBundle& bundle, const TrainConfig& config) {
  validate_config(config, bundle);
  TrainState state = make_state(config, bundle);
  const int eval_threads =
      config.eval_threads > 0 ? config.eval_threads : config.workers;

  const auto start = std::chrono::steady_clock::now();
  double prev_rmse = std::numeric_limits<double>::quiet_NaN();
  for (int ep = 0; ep < config.max_epochs; ++ep) {
    run_epoch(state, bundle, config);
    const EpochStats stats =
        epoch_stats(state.model, bundle, config.lambda_reg, eval_threads);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    state.log.push_back(
        {state.epoch, stats.train_rmse, stats.objective, seconds});
    if (std::isfinite(prev_rmse) && prev_rmse > 0 &&
        std::abs(prev_rmse - stats.train_rmse) / prev_rmse < config.rel_tol)
      break;
    prev_rmse = stats.train_rmse;
  }

  if (config.nonnegative)
    apply_nonnegative_projection(state.model);
  else
    finalize_orthogonalize(state.model);
  return TrainResult{std::move(state.model), std::move(state.log)};
}

void apply_nonnegative_projection(FactorModel& model) {
  auto clamp = [](std::span<double> v) {
    for (double& x : v)
      if (x < 0) x = 0;
  };
  clamp(model.core.stored());
  for (auto& f : model.factors) clamp(f.data());
  for (auto& c : model.couplings) clamp(c.factor.data());

  const int order = model.core.order();
  for (int n = 0; n < order; ++n) {
    FactorMatrix& f = model.factors[n];
    for (std::uint32_t k = 0; k < f.cols(); ++k) {
      double norm_sq = 0.0;
      for (std::uint32_t i = 0; i < f.rows(); ++i) {
        const double v = f.row(i)[k];
        norm_sq += v * v;
      }
      if (norm_sq == 0.0) continue;  // absorbed as norm 1
      const double norm = std::sqrt(norm_sq);
      for (std::uint32_t i = 0; i < f.rows(); ++i) f.row(i)[k] /= norm;

      if (model.core.structure() == CoreStructure::HyperDiagonalCp) {
        model.core.stored()[k] *= norm;
      } else {
        const std::size_t stride = model.core.strides()[n];
        const std::uint32_t jn = model.core.ranks()[n];
        std::span<double> g = model.core.stored();
        const std::size_t block = stride * jn;
        for (std::size_t base = 0; base < g.size(); base += block)
          for (std::size_t t = 0; t < stride; ++t)
            g[base + k * stride + t] *= norm;
      }
      for (auto& c : model.couplings)
        if (c.mode == n)
          for (std::uint32_t i = 0; i < c.factor.rows(); ++i)
            c.factor.row(i)[k] *= norm;
    }
  }
}

}  // namespace cmtf
