#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "cmtf/gradients.hpp"
#include "cmtf/sparse_data.hpp"
#include "cmtf/tucker.hpp"

namespace cmtf {

enum class GradientKernel { Naive, Opt };

struct TrainConfig {
  std::vector<std::uint32_t> ranks;
  double eta0 = 1e-3;
  double mu = 0.1;
  double lambda_reg = 0.1;
  int workers = 1;
  int max_epochs = 100;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;
  GradientKernel kernel = GradientKernel::Opt;
  CoreStructure core_structure = CoreStructure::DenseTucker;
  bool nonnegative = false;
  double init_scale = 1.0;

  /// Count how often each training index is visited per epoch (test hook).
  bool debug_count_visits = false;
  /// Threads for the per-epoch RMSE/objective pass; 0 follows `workers`.
  int eval_threads = 0;
};

struct ConvergenceLogEntry {
  int epoch;
  double train_rmse;
  double objective;
  double seconds;  // wall time since training started
};
using ConvergenceLog = std::vector<ConvergenceLogEntry>;

/// Writes the log as "epoch,train_rmse,objective,seconds".
void write_log_csv(std::ostream& out, const ConvergenceLog& log);

struct TrainState {
  FactorModel model;
  int epoch = 0;   // completed epochs
  double eta = 0;  // step size for the next epoch: eta0 * (1 + mu*epoch)^-1
  ConvergenceLog log;
  std::vector<std::uint64_t> schedule;  // merged tensor+matrix entry ids
  std::vector<std::uint32_t> visit_counts;  // filled when debug_count_visits
};

/// Random model with the training initialization law: factor entries
/// uniform on [0, scale/sqrt(J_n)), core entries uniform on [0, scale).
/// Draw order: core, factors in mode order, then coupled factors.
FactorModel random_model(
    std::span<const std::uint32_t> dims, std::span<const std::uint32_t> ranks,
    CoreStructure structure,
    const std::vector<std::pair<int, std::uint32_t>>& coupling_shapes,
    double scale, std::mt19937_64& rng);

void validate_config(const TrainConfig& config, const DataBundle& bundle);

/// Seed-deterministic initial model for this bundle.
FactorModel initialize(const TrainConfig& config, const DataBundle& bundle);

TrainState make_state(const TrainConfig& config, const DataBundle& bundle);

/// One full pass: every training index visited exactly once in a fresh
/// shuffled interleaving, split into one contiguous chunk per worker.
/// Worker 0 alone applies core updates, scaled by the worker count.
/// Throws DivergenceError if any parameter is non-finite afterwards.
void run_epoch(TrainState& state, const DataBundle& bundle,
               const TrainConfig& config);

struct TrainResult {
  FactorModel model;
  ConvergenceLog log;
};

/// Epochs until the relative train-RMSE change drops below rel_tol or
/// max_epochs is hit, then QR finalization (or, in non-negative mode, the
/// column normalization of apply_nonnegative_projection).
TrainResult train(const DataBundle& bundle, const TrainConfig& config);

/// Clamps negatives to zero, gives every factor column unit L2 norm and
/// absorbs the norms into the core (and coupled factors), preserving all
/// predictions. All-zero columns are left as they are.
void apply_nonnegative_projection(FactorModel& model);

/// Contiguous per-worker ranges; exactly `workers` entries, possibly empty.
std::vector<std::pair<std::size_t, std::size_t>> worker_chunks(std::size_t n,
                                                               int workers);

/// Tensor entry ids [0, nnz) followed by matrix entries in bundle order.
std::vector<std::uint64_t> build_schedule(const DataBundle& bundle);

/// Fisher-Yates shuffle with the epoch-derived stream of `seed`.
void shuffle_schedule(std::vector<std::uint64_t>& schedule, std::uint64_t seed,
                      int epoch);

}  // namespace cmtf
