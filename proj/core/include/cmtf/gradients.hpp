#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmtf/tucker.hpp"

namespace cmtf {

/// Element-wise product of the core with the selected factor rows. Its
/// entries sum to the model prediction for the entry that produced it.
/// Shares the core's shape and storage convention (superdiagonal in CP
/// mode, where collapsing is the identity).
class IntermediateTensor {
 public:
  explicit IntermediateTensor(const CoreTensor& core);

  const std::vector<std::uint32_t>& ranks() const { return ranks_; }
  CoreStructure structure() const { return structure_; }
  const std::vector<std::size_t>& strides() const { return strides_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

 private:
  std::vector<std::uint32_t> ranks_;
  CoreStructure structure_;
  std::vector<std::size_t> strides_;
  std::vector<double> values_;
};

/// Sum of the intermediate tensor over all modes except `mode`; component k
/// aggregates every element whose mode index is k.
void collapse(const IntermediateTensor& s, int mode, std::span<double> out);

/// Gradient of the objective restricted to one observed tensor entry.
struct EntryGradient {
  explicit EntryGradient(const CoreTensor& core);

  std::vector<std::vector<double>> rows;  // one length-J_n vector per mode
  std::vector<double> core;               // stored like the core
  double residual = 0.0;
};

/// Per-worker scratch so the kernels allocate nothing per entry.
struct KernelWorkspace {
  explicit KernelWorkspace(const CoreTensor& core);

  EntryGradient grad;
  IntermediateTensor s;
  std::vector<double> contract_buf;
};

/// Direct kernel: one prediction pass plus one contraction pass per mode.
/// `mode_counts[n]` is the number of training entries sharing this entry's
/// mode-n index (must be >= 1); `nnz_total` the training entry count.
/// Skipping the core gradient (`with_core_grad = false`) lets
/// non-designated workers avoid the most expensive term.
void compute_gradient(double x, const CoreTensor& core,
                      std::span<const double* const> rows, double lambda_reg,
                      std::span<const std::uint32_t> mode_counts,
                      std::uint64_t nnz_total, KernelWorkspace& ws,
                      bool with_core_grad = true);

/// Intermediate-reuse kernel: builds the intermediate tensor once, reads the
/// prediction off its sum, and derives each row gradient by collapsing and
/// dividing out the mode's own row. Numerically equal to compute_gradient;
/// near-zero divisors fall back to the direct formulas per component.
void compute_gradient_opt(double x, const CoreTensor& core,
                          std::span<const double* const> rows,
                          double lambda_reg,
                          std::span<const std::uint32_t> mode_counts,
                          std::uint64_t nnz_total, KernelWorkspace& ws,
                          bool with_core_grad = true);

/// Gradient of the coupled-matrix term at one observed matrix entry.
struct MatrixEntryGradient {
  std::vector<double> du;
  std::vector<double> dv;
  double residual = 0.0;
};

void matrix_entry_gradients(double y, std::span<const double> u_row,
                            std::span<const double> v_row, double lambda_m,
                            double lambda_reg, std::uint32_t col_count,
                            MatrixEntryGradient& out);

}  // namespace cmtf
