#include "cmtf/gradients.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cmtf/relaxed.hpp"

namespace cmtf {

// Below this magnitude a factor or core entry cannot be divided out; the
// affected component is recomputed with the direct formula instead.
static constexpr double kDivisorFloor = 1e-12;
static constexpr int kMaxOrder = 16;

IntermediateTensor::IntermediateTensor(const CoreTensor& core)
    : ranks_(core.ranks()),
      structure_(core.structure()),
      strides_(core.strides()),
      values_(core.stored().size(), 0.0) {}

EntryGradient::EntryGradient(const CoreTensor& core)
    : core(core.stored().size(), 0.0) {
  rows.reserve(core.ranks().size());
  for (std::uint32_t j : core.ranks())
    rows.emplace_back(std::size_t(j), 0.0);
}

KernelWorkspace::KernelWorkspace(const CoreTensor& core)
    : grad(core), s(core) {
  contract_buf.resize(
      *std::max_element(core.ranks().begin(), core.ranks().end()));
}

void collapse(const IntermediateTensor& s, int mode, std::span<double> out) {
  const auto& ranks = s.ranks();
  if (mode < 0 || mode >= static_cast<int>(ranks.size()))
    throw ValidationError("collapse mode out of range");
  if (out.size() != ranks[mode])
    throw ValidationError("collapse output length mismatch");

  std::span<const double> v = s.values();
  if (s.structure() == CoreStructure::HyperDiagonalCp) {
    // Element (k,...,k) is the only one whose mode index is k.
    std::copy(v.begin(), v.end(), out.begin());
    return;
  }

  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t stride = s.strides()[mode];
  const std::uint32_t jn = ranks[mode];
  const std::size_t block = stride * jn;
  for (std::size_t base = 0; base < v.size(); base += block)
    for (std::uint32_t k = 0; k < jn; ++k) {
      double acc = 0.0;
      const double* p = v.data() + base + k * stride;
      for (std::size_t t = 0; t < stride; ++t) acc += p[t];
      out[k] += acc;
    }
}

namespace {

void check_kernel_args(const CoreTensor& core,
                       std::span<const double* const> rows,
                       std::span<const std::uint32_t> mode_counts) {
  const std::size_t order = core.ranks().size();
  if (rows.size() != order || mode_counts.size() != order)
    throw ValidationError("kernel argument order mismatch");
}

// Regularized row gradient from an unregularized contraction.
void finish_row_gradient(std::span<const double> contraction, double residual,
                         const double* u, double lambda_reg,
                         std::uint32_t count, std::span<double> out) {
  const double reg = lambda_reg / static_cast<double>(count);
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = -residual * contraction[k] + reg * relaxed_load(u[k]);
}

}  // namespace

void compute_gradient(double x, const CoreTensor& core,
                      std::span<const double* const> rows, double lambda_reg,
                      std::span<const std::uint32_t> mode_counts,
                      std::uint64_t nnz_total, KernelWorkspace& ws,
                      bool with_core_grad) {
  check_kernel_args(core, rows, mode_counts);
  const auto& ranks = core.ranks();
  const int order = core.order();

  const double xhat = predict_entry(core, rows);
  const double r = x - xhat;
  ws.grad.residual = r;

  for (int n = 0; n < order; ++n) {
    std::span<double> buf(ws.contract_buf.data(), ranks[n]);
    contract_all_but(core, rows, n, buf);
    finish_row_gradient(buf, r, rows[n], lambda_reg, mode_counts[n],
                        ws.grad.rows[n]);
  }

  if (!with_core_grad) return;
  const double core_reg = lambda_reg / static_cast<double>(nnz_total);
  const double* g = core.stored().data();
  double* out = ws.grad.core.data();

  if (core.structure() == CoreStructure::HyperDiagonalCp) {
    for (std::uint32_t k = 0; k < ranks[0]; ++k) {
      double p = 1.0;
      for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][k]);
      out[k] = -r * p + core_reg * relaxed_load(g[k]);
    }
    return;
  }

  std::array<std::uint32_t, kMaxOrder> j{};
  const std::size_t size = core.dense_size();
  for (std::size_t d = 0; d < size; ++d) {
    double p = 1.0;
    for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][j[n]]);
    out[d] = -r * p + core_reg * relaxed_load(g[d]);
    for (int n = order - 1; n >= 0; --n) {
      if (++j[n] < ranks[n]) break;
      j[n] = 0;
    }
  }
}

void compute_gradient_opt(double x, const CoreTensor& core,
                          std::span<const double* const> rows,
                          double lambda_reg,
                          std::span<const std::uint32_t> mode_counts,
                          std::uint64_t nnz_total, KernelWorkspace& ws,
                          bool with_core_grad) {
  check_kernel_args(core, rows, mode_counts);
  const auto& ranks = core.ranks();
  const int order = core.order();
  const double* g = core.stored().data();
  double* s = ws.s.values().data();
  const std::size_t stored = core.stored().size();

  // One pass builds the intermediate tensor and the prediction together.
  double xhat = 0.0;
  if (core.structure() == CoreStructure::HyperDiagonalCp) {
    for (std::uint32_t k = 0; k < ranks[0]; ++k) {
      double p = relaxed_load(g[k]);
      for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][k]);
      s[k] = p;
      xhat += p;
    }
  } else {
    std::array<std::uint32_t, kMaxOrder> j{};
    for (std::size_t d = 0; d < stored; ++d) {
      double p = relaxed_load(g[d]);
      for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][j[n]]);
      s[d] = p;
      xhat += p;
      for (int n = order - 1; n >= 0; --n) {
        if (++j[n] < ranks[n]) break;
        j[n] = 0;
      }
    }
  }
  const double r = x - xhat;
  ws.grad.residual = r;

  for (int n = 0; n < order; ++n) {
    const double* u = rows[n];
    bool divisible = true;
    for (std::uint32_t k = 0; k < ranks[n]; ++k)
      if (std::abs(relaxed_load(u[k])) < kDivisorFloor) {
        divisible = false;
        break;
      }
    std::span<double> buf(ws.contract_buf.data(), ranks[n]);
    if (divisible) {
      collapse(ws.s, n, buf);
      for (std::uint32_t k = 0; k < ranks[n]; ++k)
        buf[k] /= relaxed_load(u[k]);
    } else {
      contract_all_but(core, rows, n, buf);
    }
    finish_row_gradient(buf, r, u, lambda_reg, mode_counts[n],
                        ws.grad.rows[n]);
  }

  if (!with_core_grad) return;
  const double core_reg = lambda_reg / static_cast<double>(nnz_total);
  double* out = ws.grad.core.data();

  if (core.structure() == CoreStructure::HyperDiagonalCp) {
    for (std::uint32_t k = 0; k < ranks[0]; ++k) {
      const double gk = relaxed_load(g[k]);
      double p;
      if (std::abs(gk) < kDivisorFloor) {
        p = 1.0;
        for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][k]);
      } else {
        p = s[k] / gk;
      }
      out[k] = -r * p + core_reg * gk;
    }
    return;
  }

  std::array<std::uint32_t, kMaxOrder> j{};
  for (std::size_t d = 0; d < stored; ++d) {
    const double gd = relaxed_load(g[d]);
    double p;
    if (std::abs(gd) < kDivisorFloor) {
      p = 1.0;
      for (int n = 0; n < order; ++n) p *= relaxed_load(rows[n][j[n]]);
    } else {
      p = s[d] / gd;
    }
    out[d] = -r * p + core_reg * gd;
    for (int n = order - 1; n >= 0; --n) {
      if (++j[n] < ranks[n]) break;
      j[n] = 0;
    }
  }
}

void matrix_entry_gradients(double y, std::span<const double> u_row,
                            std::span<const double> v_row, double lambda_m,
                            double lambda_reg, std::uint32_t col_count,
                            MatrixEntryGradient& out) {
  if (u_row.size() != v_row.size())
    throw ValidationError("coupled rows must have equal length");
  const std::size_t j = u_row.size();
  out.du.resize(j);
  out.dv.resize(j);

  double yhat = 0.0;
  for (std::size_t k = 0; k < j; ++k)
    yhat += relaxed_load(u_row[k]) * relaxed_load(v_row[k]);
  const double r = y - yhat;
  out.residual = r;

  const double reg = lambda_m * lambda_reg / static_cast<double>(col_count);
  for (std::size_t k = 0; k < j; ++k) {
    const double u = relaxed_load(u_row[k]);
    const double v = relaxed_load(v_row[k]);
    out.du[k] = -lambda_m * r * v;
    out.dv[k] = -lambda_m * r * u + reg * v;
  }
}

}  // namespace cmtf
