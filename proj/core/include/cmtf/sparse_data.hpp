#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "cmtf/errors.hpp"

namespace cmtf {

/// Observed entries of an N-way tensor in coordinate (COO) format.
///
/// Indices are 0-based in memory; the text format is 1-based. Instances are
/// immutable after construction and safe to share read-only across threads.
class SparseTensor {
 public:
  /// Validates index ranges, rejects duplicates and non-finite values.
  /// `indices` holds order() consecutive components per entry.
  SparseTensor(std::vector<std::uint32_t> dims,
               std::vector<std::uint32_t> indices, std::vector<double> values);

  int order() const { return static_cast<int>(dims_.size()); }
  const std::vector<std::uint32_t>& dims() const { return dims_; }
  std::size_t nnz() const { return values_.size(); }

  std::span<const std::uint32_t> index(std::size_t e) const {
    return {indices_.data() + e * dims_.size(), dims_.size()};
  }
  double value(std::size_t e) const { return values_[e]; }

  const std::vector<std::uint32_t>& indices() const { return indices_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<std::uint32_t> dims_;
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
};

/// A sparse matrix coupled to one tensor mode: rows index that mode, the
/// column space is the matrix's own second mode.
class CoupledMatrix {
 public:
  CoupledMatrix(int coupled_mode, std::uint32_t rows, std::uint32_t cols,
                std::vector<std::uint32_t> indices, std::vector<double> values,
                double weight);

  int coupled_mode() const { return mode_; }  // 0-based
  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  double weight() const { return weight_; }

  std::uint32_t row_index(std::size_t e) const { return indices_[2 * e]; }
  std::uint32_t col_index(std::size_t e) const { return indices_[2 * e + 1]; }
  double value(std::size_t e) const { return values_[e]; }

  const std::vector<std::uint32_t>& indices() const { return indices_; }
  const std::vector<double>& values() const { return values_; }

 private:
  int mode_;
  std::uint32_t rows_;
  std::uint32_t cols_;
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
  double weight_;
};

/// How often each index value appears in the observed entries, per tensor
/// mode and per coupled-matrix column. These counts scale the per-row
/// regularization terms.
struct ModeIndexCounts {
  std::vector<std::vector<std::uint32_t>> tensor;       // [mode][i]
  std::vector<std::vector<std::uint32_t>> matrix_cols;  // [matrix][j2]
};

struct DataBundle {
  SparseTensor tensor;
  std::vector<CoupledMatrix> matrices;
  ModeIndexCounts counts;
};

/// Parses the sparse-tensor text format: an optional header line with the
/// mode sizes, then one entry per line (1-based indices followed by the
/// value). '#' comments and blank lines are ignored; without a header the
/// sizes are the per-mode maximum index.
SparseTensor load_tensor(const std::filesystem::path& path);

/// Same conventions with an optional "rows cols" header. `coupled_mode` is
/// 1-based as on the command line; the tensor supplies the row-space bound.
CoupledMatrix load_matrix(const std::filesystem::path& path, int coupled_mode,
                          double weight, const SparseTensor& tensor);

void save_tensor(const std::filesystem::path& path, const SparseTensor& t);
void save_matrix(const std::filesystem::path& path, const CoupledMatrix& m);

/// Uniform split over entries. The test half gets round(test_fraction * nnz)
/// entries; both halves keep the original dims.
std::pair<SparseTensor, SparseTensor> split_train_test(const SparseTensor& t,
                                                       double test_fraction,
                                                       std::uint64_t seed);

ModeIndexCounts count_mode_occurrences(
    const SparseTensor& tensor, const std::vector<CoupledMatrix>& matrices);

DataBundle make_bundle(SparseTensor tensor,
                       std::vector<CoupledMatrix> matrices = {});

}  // namespace cmtf
