#pragma once

#include <cstdint>
#include <vector>

#include "cmtf/sparse_data.hpp"
#include "cmtf/tucker.hpp"

namespace cmtf {

struct EvalReport {
  double test_rmse = 0.0;
  std::uint64_t n_entries = 0;
  std::vector<double> matrix_rmse;  // one per coupled matrix evaluated
};

/// Root mean squared residual over the tensor's observed entries.
/// Summation is blockwise pairwise in a fixed block order, so the result is
/// identical for any thread count.
double test_rmse(const FactorModel& model, const SparseTensor& tensor,
                 int n_threads = 1);

/// RMSE over one coupled matrix; `coupling_index` selects the model's V.
double matrix_rmse(const FactorModel& model, const CoupledMatrix& matrix,
                   std::size_t coupling_index, int n_threads = 1);

/// Full objective: half the tensor term plus half of each weighted matrix
/// term, with the per-entry-distributed regularizers folded back in.
double objective_value(const FactorModel& model, const DataBundle& bundle,
                       double lambda_reg, int n_threads = 1);

struct EpochStats {
  double train_rmse = 0.0;
  double objective = 0.0;
};

/// train-RMSE and objective in one pass over the bundle.
EpochStats epoch_stats(const FactorModel& model, const DataBundle& bundle,
                       double lambda_reg, int n_threads = 1);

EvalReport evaluate(const FactorModel& model, const SparseTensor& test,
                    const std::vector<CoupledMatrix>& matrices = {},
                    int n_threads = 1);

}  // namespace cmtf
