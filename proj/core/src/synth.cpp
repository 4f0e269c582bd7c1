#include "cmtf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "cmtf/rng.hpp"
#include "cmtf/trainer.hpp"

namespace cmtf {

namespace {

using u128 = unsigned __int128;

u128 universe_size(std::span<const std::uint32_t> dims) {
  u128 total = 1;
  for (std::uint32_t d : dims) {
    if (d != 0 && total > (~u128{0}) / d)
      return ~u128{0};  // saturate; only compared against entry counts
    total *= d;
  }
  return total;
}

void decode(std::uint64_t linear, std::span<const std::uint32_t> dims,
            std::uint32_t* out) {
  for (int n = static_cast<int>(dims.size()) - 1; n >= 0; --n) {
    out[n] = static_cast<std::uint32_t>(linear % dims[n]);
    linear /= dims[n];
  }
}

// Distinct uniform index tuples. Rejection with a hash set for the sparse
// regime; shuffled enumeration once more than half the universe is
// requested and the universe is small enough to materialize. Very large
// universes (beyond 64-bit linearization) use sort-and-resample rounds.
std::vector<std::uint32_t> sample_distinct(std::span<const std::uint32_t> dims,
                                           std::uint64_t n,
                                           std::mt19937_64& rng) {
  const std::size_t order = dims.size();
  const u128 total = universe_size(dims);
  if (u128(n) > total)
    throw ValidationError("requested more entries than index combinations");

  std::vector<std::uint32_t> out;
  out.reserve(n * order);

  const bool packable = total <= u128(~std::uint64_t{0});
  if (packable) {
    const auto total64 = static_cast<std::uint64_t>(total);
    if (n * 2 > total64 && total64 <= (std::uint64_t{1} << 26)) {
      std::vector<std::uint64_t> all(total64);
      std::iota(all.begin(), all.end(), std::uint64_t{0});
      for (std::uint64_t i = 0; i < n; ++i)
        std::swap(all[i], all[i + bounded(rng, total64 - i)]);
      std::uint32_t tmp[16];
      for (std::uint64_t i = 0; i < n; ++i) {
        decode(all[i], dims, tmp);
        out.insert(out.end(), tmp, tmp + order);
      }
      return out;
    }
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(n * 2);
    std::uint32_t tmp[16];
    while (seen.size() < n) {
      const std::uint64_t linear = bounded(rng, total64);
      if (!seen.insert(linear).second) continue;
      decode(linear, dims, tmp);
      out.insert(out.end(), tmp, tmp + order);
    }
    return out;
  }

  // Universe too large to pack: draw coordinates directly, then drop
  // duplicate tuples and redraw the deficit.
  std::vector<std::vector<std::uint32_t>> rows;
  rows.reserve(n);
  while (rows.size() < n) {
    const std::uint64_t missing = n - rows.size();
    for (std::uint64_t i = 0; i < missing; ++i) {
      std::vector<std::uint32_t> tuple(order);
      for (std::size_t m = 0; m < order; ++m)
        tuple[m] = static_cast<std::uint32_t>(bounded(rng, dims[m]));
      rows.push_back(std::move(tuple));
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  }
  for (const auto& tuple : rows)
    out.insert(out.end(), tuple.begin(), tuple.end());
  return out;
}

}  // namespace

SynthData generate(const SynthSpec& spec) {
  if (spec.dims.size() < 2)
    throw ValidationError("synthetic tensor needs at least 2 modes");
  if (spec.ranks.size() != spec.dims.size())
    throw ValidationError("rank list must match tensor order");
  if (spec.n_entries == 0)
    throw ValidationError("entry count must be positive");
  if (spec.with_matrix &&
      (spec.coupled_mode < 0 ||
       spec.coupled_mode >= static_cast<int>(spec.dims.size())))
    throw ValidationError("coupled mode out of range");
  if (!(spec.matrix_ratio >= 0))
    throw ValidationError("matrix ratio must be nonnegative");

  auto rng = make_rng(spec.seed, RngStream::Synth);
  const std::size_t order = spec.dims.size();

  std::vector<std::pair<int, std::uint32_t>> coupling_shapes;
  std::uint32_t matrix_cols = 0;
  if (spec.with_matrix) {
    matrix_cols =
        spec.matrix_cols ? spec.matrix_cols : spec.dims[spec.coupled_mode];
    coupling_shapes.emplace_back(spec.coupled_mode, matrix_cols);
  }
  FactorModel truth =
      random_model(spec.dims, spec.ranks, CoreStructure::DenseTucker,
                   coupling_shapes, 1.0, rng);

  std::normal_distribution<double> noise(0.0, spec.noise_stddev);
  auto noisy = [&](double v) {
    return spec.noise_stddev > 0 ? v + noise(rng) : v;
  };

  std::vector<std::uint32_t> idx = sample_distinct(spec.dims, spec.n_entries, rng);
  std::vector<double> vals(spec.n_entries);
  {
    std::vector<const double*> rows(order);
    for (std::uint64_t e = 0; e < spec.n_entries; ++e) {
      for (std::size_t n = 0; n < order; ++n)
        rows[n] = truth.factors[n].row(idx[e * order + n]).data();
      vals[e] = noisy(predict_entry(truth.core, rows));
    }
  }
  SparseTensor tensor(spec.dims, std::move(idx), std::move(vals));

  std::vector<CoupledMatrix> matrices;
  if (spec.with_matrix) {
    const auto n_matrix = static_cast<std::uint64_t>(
        std::llround(spec.matrix_ratio * static_cast<double>(spec.n_entries)));
    if (n_matrix > 0) {
      const std::uint32_t mdims[2] = {spec.dims[spec.coupled_mode],
                                      matrix_cols};
      std::vector<std::uint32_t> midx = sample_distinct(mdims, n_matrix, rng);
      std::vector<double> mvals(n_matrix);
      const FactorMatrix& u = truth.factors[spec.coupled_mode];
      const FactorMatrix& v = truth.couplings[0].factor;
      for (std::uint64_t e = 0; e < n_matrix; ++e) {
        auto ur = u.row(midx[2 * e]);
        auto vr = v.row(midx[2 * e + 1]);
        double y = 0.0;
        for (std::size_t k = 0; k < ur.size(); ++k) y += ur[k] * vr[k];
        mvals[e] = noisy(y);
      }
      matrices.emplace_back(spec.coupled_mode, mdims[0], mdims[1],
                            std::move(midx), std::move(mvals),
                            spec.matrix_weight);
    }
  }

  return SynthData{make_bundle(std::move(tensor), std::move(matrices)),
                   std::move(truth)};
}

}  // namespace cmtf
