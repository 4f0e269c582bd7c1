#include "cmtf/eval.hpp"

#include <cmath>
#include <thread>

namespace cmtf {

namespace {

constexpr std::size_t kBlock = 1024;

// Fixed-size blocks summed independently, then a pairwise reduction over the
// block sums. The result does not depend on the thread count.
template <typename MakeAddend>
double blocked_sum(std::size_t n, int n_threads, MakeAddend&& make) {
  if (n == 0) return 0.0;
  const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(n_blocks, 0.0);

  auto run = [&](std::size_t b_lo, std::size_t b_hi) {
    auto addend = make();
    for (std::size_t b = b_lo; b < b_hi; ++b) {
      const std::size_t lo = b * kBlock;
      const std::size_t hi = std::min(n, lo + kBlock);
      double acc = 0.0;
      for (std::size_t i = lo; i < hi; ++i) acc += addend(i);
      partial[b] = acc;
    }
  };

  if (n_threads <= 1 || n_blocks == 1) {
    run(0, n_blocks);
  } else {
    const int workers = std::min<std::size_t>(n_threads, n_blocks);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t per = (n_blocks + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const std::size_t lo = per * w;
      const std::size_t hi = std::min(n_blocks, lo + per);
      if (lo < hi) pool.emplace_back(run, lo, hi);
    }
    for (auto& t : pool) t.join();
  }

  for (std::size_t width = 1; width < n_blocks; width *= 2)
    for (std::size_t i = 0; i + width < n_blocks; i += 2 * width)
      partial[i] += partial[i + width];
  return partial[0];
}

double tensor_sse(const FactorModel& model, const SparseTensor& tensor,
                  int n_threads) {
  const int order = tensor.order();
  return blocked_sum(tensor.nnz(), n_threads, [&] {
    return [&, rows = std::vector<const double*>(order)](
               std::size_t e) mutable {
      auto idx = tensor.index(e);
      for (int n = 0; n < order; ++n)
        rows[n] = model.factors[n].row(idx[n]).data();
      const double r = tensor.value(e) - predict_entry(model.core, rows);
      return r * r;
    };
  });
}

double matrix_sse(const FactorModel& model, const CoupledMatrix& matrix,
                  std::size_t coupling_index, int n_threads) {
  const FactorMatrix& u = model.factors[matrix.coupled_mode()];
  const FactorMatrix& v = model.couplings[coupling_index].factor;
  return blocked_sum(matrix.nnz(), n_threads, [&] {
    return [&](std::size_t e) {
      auto ur = u.row(matrix.row_index(e));
      auto vr = v.row(matrix.col_index(e));
      double yhat = 0.0;
      for (std::size_t k = 0; k < ur.size(); ++k) yhat += ur[k] * vr[k];
      const double r = matrix.value(e) - yhat;
      return r * r;
    };
  });
}

double squared_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

// Row norms restricted to indices that occur in the training data; rows the
// objective never touches contribute nothing.
double observed_row_norms(const FactorMatrix& f,
                          const std::vector<std::uint32_t>& counts) {
  double acc = 0.0;
  for (std::uint32_t i = 0; i < f.rows(); ++i)
    if (counts[i] > 0) acc += squared_norm(f.row(i));
  return acc;
}

}  // namespace

double test_rmse(const FactorModel& model, const SparseTensor& tensor,
                 int n_threads) {
  if (tensor.nnz() == 0)
    throw ValidationError("cannot evaluate an empty tensor");
  return std::sqrt(tensor_sse(model, tensor, n_threads) /
                   static_cast<double>(tensor.nnz()));
}

double matrix_rmse(const FactorModel& model, const CoupledMatrix& matrix,
                   std::size_t coupling_index, int n_threads) {
  if (matrix.nnz() == 0)
    throw ValidationError("cannot evaluate an empty matrix");
  if (coupling_index >= model.couplings.size() ||
      matrix.coupled_mode() >= static_cast<int>(model.factors.size()))
    throw ValidationError("no coupled factor for this matrix");
  return std::sqrt(matrix_sse(model, matrix, coupling_index, n_threads) /
                   static_cast<double>(matrix.nnz()));
}

EpochStats epoch_stats(const FactorModel& model, const DataBundle& bundle,
                       double lambda_reg, int n_threads) {
  const SparseTensor& tensor = bundle.tensor;
  const double sse = tensor_sse(model, tensor, n_threads);

  double f_t = sse + lambda_reg * squared_norm(model.core.stored());
  for (int n = 0; n < tensor.order(); ++n)
    f_t += lambda_reg *
           observed_row_norms(model.factors[n], bundle.counts.tensor[n]);

  double objective = 0.5 * f_t;
  for (std::size_t m = 0; m < bundle.matrices.size(); ++m) {
    const CoupledMatrix& mat = bundle.matrices[m];
    double f_m = matrix_sse(model, mat, m, n_threads);
    f_m += lambda_reg * observed_row_norms(model.couplings[m].factor,
                                           bundle.counts.matrix_cols[m]);
    objective += 0.5 * mat.weight() * f_m;
  }

  EpochStats stats;
  stats.train_rmse =
      tensor.nnz() ? std::sqrt(sse / static_cast<double>(tensor.nnz())) : 0.0;
  stats.objective = objective;
  return stats;
}

double objective_value(const FactorModel& model, const DataBundle& bundle,
                       double lambda_reg, int n_threads) {
  if (model.couplings.size() != bundle.matrices.size())
    throw ValidationError("model has " +
                          std::to_string(model.couplings.size()) +
                          " coupled factors for " +
                          std::to_string(bundle.matrices.size()) +
                          " matrices");
  return epoch_stats(model, bundle, lambda_reg, n_threads).objective;
}

EvalReport evaluate(const FactorModel& model, const SparseTensor& test,
                    const std::vector<CoupledMatrix>& matrices,
                    int n_threads) {
  EvalReport report;
  report.test_rmse = test_rmse(model, test, n_threads);
  report.n_entries = test.nnz();
  for (std::size_t m = 0; m < matrices.size(); ++m)
    report.matrix_rmse.push_back(matrix_rmse(model, matrices[m], m, n_threads));
  return report;
}

}  // namespace cmtf
