#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmtf/errors.hpp"

namespace cmtf {

enum class CoreStructure {
  DenseTucker,
  HyperDiagonalCp,  // equal ranks, only the superdiagonal is stored
};

/// Small dense core tensor, row-major with mode 1 slowest. In CP mode only
/// the superdiagonal is stored, but indexed queries behave as if dense.
class CoreTensor {
 public:
  CoreTensor(std::vector<std::uint32_t> ranks, CoreStructure structure,
             std::vector<double> values);

  static CoreTensor zeros(std::vector<std::uint32_t> ranks,
                          CoreStructure structure);

  const std::vector<std::uint32_t>& ranks() const { return ranks_; }
  int order() const { return static_cast<int>(ranks_.size()); }
  CoreStructure structure() const { return structure_; }

  /// Number of elements the dense core would have.
  std::size_t dense_size() const { return dense_size_; }
  /// Linear strides of the dense layout (last mode contiguous).
  const std::vector<std::size_t>& strides() const { return strides_; }

  std::span<double> stored() { return values_; }
  std::span<const double> stored() const { return values_; }

  /// Value at a multi-index, answering as if dense in CP mode.
  double at(std::span<const std::uint32_t> j) const;

 private:
  std::vector<std::uint32_t> ranks_;
  CoreStructure structure_;
  std::vector<double> values_;
  std::vector<std::size_t> strides_;
  std::size_t dense_size_;
};

/// Dense row-major factor matrix; rows are the per-index latent vectors.
class FactorMatrix {
 public:
  FactorMatrix(std::uint32_t rows, std::uint32_t cols,
               std::vector<double> values);
  static FactorMatrix zeros(std::uint32_t rows, std::uint32_t cols);

  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }

  std::span<double> row(std::uint32_t i) {
    return {values_.data() + static_cast<std::size_t>(i) * cols_, cols_};
  }
  std::span<const double> row(std::uint32_t i) const {
    return {values_.data() + static_cast<std::size_t>(i) * cols_, cols_};
  }
  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }

 private:
  std::uint32_t rows_;
  std::uint32_t cols_;
  std::vector<double> values_;
};

/// Factor for one coupled matrix; `mode` is the 0-based tensor mode whose
/// factor it shares.
struct Coupling {
  int mode;
  FactorMatrix factor;
};

struct FactorModel {
  CoreTensor core;
  std::vector<FactorMatrix> factors;
  std::vector<Coupling> couplings;
};

/// Model prediction for one entry: the core contracted with one factor row
/// per mode.
double predict_entry(const CoreTensor& core,
                     std::span<const double* const> rows);

/// Contraction with every mode's row except `skip_mode` (0-based); the
/// result has length ranks[skip_mode] and its dot with the skipped row is
/// predict_entry.
void contract_all_but(const CoreTensor& core,
                      std::span<const double* const> rows, int skip_mode,
                      std::span<double> out);

/// Mode-n product with a square matrix R (row-major J_n x J_n). The result
/// is always densely stored.
CoreTensor core_mode_product(const CoreTensor& core, std::span<const double> r,
                             int mode);

/// Thin-QR finalization: factors become orthonormal, the core absorbs every
/// R along its mode, coupled factors absorb R^T. Signs are fixed so the
/// diagonal of each R is nonnegative, making the result deterministic.
/// Predictions are unchanged.
void finalize_orthogonalize(FactorModel& model);

/// Shape checks shared by trainer and IO paths.
void validate_model(const FactorModel& model);

}  // namespace cmtf
