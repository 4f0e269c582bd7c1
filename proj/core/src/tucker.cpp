#include "cmtf/tucker.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

#include "cmtf/relaxed.hpp"

namespace cmtf {

// Digit counters for walking the dense core live on the stack.
static constexpr int kMaxOrder = 16;

namespace {

std::size_t checked_dense_size(const std::vector<std::uint32_t>& ranks) {
  if (ranks.size() < 1 || ranks.size() > kMaxOrder)
    throw ValidationError("core order must be between 1 and " +
                          std::to_string(kMaxOrder));
  std::size_t size = 1;
  for (std::uint32_t j : ranks) {
    if (j == 0) throw ValidationError("ranks must be positive");
    if (size > (std::size_t(1) << 40) / j)
      throw ValidationError("core tensor too large");
    size *= j;
  }
  return size;
}

}  // namespace

CoreTensor::CoreTensor(std::vector<std::uint32_t> ranks,
                       CoreStructure structure, std::vector<double> values)
    : ranks_(std::move(ranks)), structure_(structure),
      values_(std::move(values)) {
  dense_size_ = checked_dense_size(ranks_);
  if (structure_ == CoreStructure::HyperDiagonalCp) {
    for (std::uint32_t j : ranks_)
      if (j != ranks_[0])
        throw ValidationError("CP core requires equal ranks on every mode");
    if (values_.size() != ranks_[0])
      throw ValidationError("CP core stores exactly the superdiagonal");
  } else if (values_.size() != dense_size_) {
    throw ValidationError("core value count does not match ranks");
  }
  for (double v : values_)
    if (!std::isfinite(v)) throw ValidationError("core value is not finite");
  strides_.resize(ranks_.size());
  std::size_t s = 1;
  for (int n = static_cast<int>(ranks_.size()) - 1; n >= 0; --n) {
    strides_[n] = s;
    s *= ranks_[n];
  }
}

CoreTensor CoreTensor::zeros(std::vector<std::uint32_t> ranks,
                             CoreStructure structure) {
  std::size_t n = structure == CoreStructure::HyperDiagonalCp
                      ? ranks.at(0)
                      : checked_dense_size(ranks);
  return CoreTensor(std::move(ranks), structure, std::vector<double>(n, 0.0));
}

double CoreTensor::at(std::span<const std::uint32_t> j) const {
  if (j.size() != ranks_.size())
    throw ValidationError("core index order mismatch");
  for (std::size_t n = 0; n < j.size(); ++n)
    if (j[n] >= ranks_[n]) throw ValidationError("core index out of range");
  if (structure_ == CoreStructure::HyperDiagonalCp) {
    for (std::size_t n = 1; n < j.size(); ++n)
      if (j[n] != j[0]) return 0.0;
    return values_[j[0]];
  }
  std::size_t linear = 0;
  for (std::size_t n = 0; n < j.size(); ++n) linear += j[n] * strides_[n];
  return values_[linear];
}

FactorMatrix::FactorMatrix(std::uint32_t rows, std::uint32_t cols,
                           std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows_ == 0 || cols_ == 0)
    throw ValidationError("factor matrix must be non-empty");
  if (values_.size() != static_cast<std::size_t>(rows_) * cols_)
    throw ValidationError("factor value count does not match shape");
  for (double v : values_)
    if (!std::isfinite(v)) throw ValidationError("factor value is not finite");
}

FactorMatrix FactorMatrix::zeros(std::uint32_t rows, std::uint32_t cols) {
  return FactorMatrix(rows, cols,
                      std::vector<double>(std::size_t(rows) * cols, 0.0));
}

double predict_entry(const CoreTensor& core,
                     std::span<const double* const> rows) {
  const auto& ranks = core.ranks();
  const int order = core.order();
  if (static_cast<int>(rows.size()) != order)
    throw ValidationError("row count does not match core order");
  const double* g = core.stored().data();

  if (core.structure() == CoreStructure::HyperDiagonalCp) {
    double acc = 0.0;
    for (std::uint32_t k = 0; k < ranks[0]; ++k) {
      double p = relaxed_load(g[k]);
      for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][k]);
      acc += p;
    }
    return acc;
  }

  std::array<std::uint32_t, kMaxOrder> j{};
  const std::size_t size = core.dense_size();
  double acc = 0.0;
  for (std::size_t d = 0; d < size; ++d) {
    double p = relaxed_load(g[d]);
    for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][j[n]]);
    acc += p;
    for (int n = order - 1; n >= 0; --n) {
      if (++j[n] < ranks[n]) break;
      j[n] = 0;
    }
  }
  return acc;
}

void contract_all_but(const CoreTensor& core,
                      std::span<const double* const> rows, int skip_mode,
                      std::span<double> out) {
  const auto& ranks = core.ranks();
  const int order = core.order();
  if (static_cast<int>(rows.size()) != order)
    throw ValidationError("row count does not match core order");
  if (skip_mode < 0 || skip_mode >= order)
    throw ValidationError("skip mode out of range");
  if (out.size() != ranks[skip_mode])
    throw ValidationError("output length does not match skipped rank");
  const double* g = core.stored().data();
  std::fill(out.begin(), out.end(), 0.0);

  if (core.structure() == CoreStructure::HyperDiagonalCp) {
    for (std::uint32_t k = 0; k < ranks[0]; ++k) {
      double p = relaxed_load(g[k]);
      for (int n = 0; n < order; ++n)
        if (n != skip_mode) p *= relaxed_load(rows[n][k]);
      out[k] += p;
    }
    return;
  }

  std::array<std::uint32_t, kMaxOrder> j{};
  const std::size_t size = core.dense_size();
  for (std::size_t d = 0; d < size; ++d) {
    double p = relaxed_load(g[d]);
    for (int n = 0; n < order; ++n)
      if (n != skip_mode) p *= relaxed_load(rows[n][j[n]]);
    out[j[skip_mode]] += p;
    for (int n = order - 1; n >= 0; --n) {
      if (++j[n] < ranks[n]) break;
      j[n] = 0;
    }
  }
}

CoreTensor core_mode_product(const CoreTensor& core, std::span<const double> r,
                             int mode) {
  const auto& ranks = core.ranks();
  const int order = core.order();
  if (mode < 0 || mode >= order) throw ValidationError("mode out of range");
  const std::uint32_t jn = ranks[mode];
  if (r.size() != static_cast<std::size_t>(jn) * jn)
    throw ValidationError("mode-product matrix must be J_n x J_n");

  CoreTensor out = CoreTensor::zeros(ranks, CoreStructure::DenseTucker);
  double* o = out.stored().data();
  const std::size_t stride = core.strides()[mode];

  if (core.structure() == CoreStructure::HyperDiagonalCp) {
    std::span<const double> g = core.stored();
    for (std::uint32_t k = 0; k < ranks[0]; ++k) {
      std::size_t base = 0;
      for (int n = 0; n < order; ++n)
        if (n != mode) base += std::size_t(k) * core.strides()[n];
      for (std::uint32_t j = 0; j < jn; ++j)
        o[base + j * stride] += g[k] * r[std::size_t(j) * jn + k];
    }
    return out;
  }

  std::span<const double> g = core.stored();
  std::array<std::uint32_t, kMaxOrder> digits{};
  const std::size_t size = core.dense_size();
  for (std::size_t d = 0; d < size; ++d) {
    const std::uint32_t in = digits[mode];
    const std::size_t base = d - std::size_t(in) * stride;
    for (std::uint32_t j = 0; j < jn; ++j)
      o[base + j * stride] += g[d] * r[std::size_t(j) * jn + in];
    for (int n = order - 1; n >= 0; --n) {
      if (++digits[n] < ranks[n]) break;
      digits[n] = 0;
    }
  }
  return out;
}

void validate_model(const FactorModel& model) {
  const auto& ranks = model.core.ranks();
  if (model.factors.size() != ranks.size())
    throw ValidationError("model has " + std::to_string(model.factors.size()) +
                          " factors for a core of order " +
                          std::to_string(ranks.size()));
  for (std::size_t n = 0; n < model.factors.size(); ++n)
    if (model.factors[n].cols() != ranks[n])
      throw ValidationError("factor " + std::to_string(n + 1) +
                            " width does not match rank");
  for (const auto& c : model.couplings) {
    if (c.mode < 0 || c.mode >= static_cast<int>(ranks.size()))
      throw ValidationError("coupling mode out of range");
    if (c.factor.cols() != ranks[c.mode])
      throw ValidationError("coupled factor width does not match rank");
  }
}

void finalize_orthogonalize(FactorModel& model) {
  validate_model(model);
  const int order = model.core.order();
  const auto& ranks = model.core.ranks();
  for (int n = 0; n < order; ++n)
    if (model.factors[n].rows() < ranks[n])
      throw ValidationError("mode " + std::to_string(n + 1) +
                            " has fewer rows than its rank; cannot "
                            "orthogonalize");

  std::vector<Eigen::MatrixXd> r_by_mode(order);
  for (int n = 0; n < order; ++n) {
    FactorMatrix& f = model.factors[n];
    const std::uint32_t rows = f.rows(), cols = f.cols();
    Eigen::MatrixXd u(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t k = 0; k < cols; ++k) u(i, k) = f.row(i)[k];

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(u);
    Eigen::MatrixXd q =
        qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
    Eigen::MatrixXd r = qr.matrixQR()
                            .topLeftCorner(cols, cols)
                            .triangularView<Eigen::Upper>();
    for (std::uint32_t k = 0; k < cols; ++k) {
      if (r(k, k) < 0) {
        r.row(k) *= -1.0;
        q.col(k) *= -1.0;
      }
    }

    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t k = 0; k < cols; ++k) f.row(i)[k] = q(i, k);

    std::vector<double> r_flat(std::size_t(cols) * cols);
    for (std::uint32_t a = 0; a < cols; ++a)
      for (std::uint32_t b = 0; b < cols; ++b)
        r_flat[std::size_t(a) * cols + b] = r(a, b);
    model.core = core_mode_product(model.core, r_flat, n);
    r_by_mode[n] = std::move(r);
  }

  for (auto& coupling : model.couplings) {
    const Eigen::MatrixXd& r = r_by_mode[coupling.mode];
    FactorMatrix& v = coupling.factor;
    const std::uint32_t cols = v.cols();
    std::vector<double> tmp(cols);
    for (std::uint32_t i = 0; i < v.rows(); ++i) {
      auto row = v.row(i);
      for (std::uint32_t k = 0; k < cols; ++k) {
        double acc = 0.0;
        for (std::uint32_t j = 0; j < cols; ++j) acc += row[j] * r(k, j);
        tmp[k] = acc;
      }
      std::copy(tmp.begin(), tmp.end(), row.begin());
    }
  }
}

}  // namespace cmtf
