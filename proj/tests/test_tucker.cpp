#include <cmath>
#include <filesystem>
#include <random>

#include "cmtf/model_io.hpp"
#include "cmtf/trainer.hpp"
#include "cmtf/tucker.hpp"
#include "doctest.h"
#include "support/test_helpers.hpp"

using namespace cmtf;
using cmtf::testing::oracle_predict;
using cmtf::testing::random_core;
using cmtf::testing::random_rows;
using cmtf::testing::rel_diff;

namespace {

FactorModel small_random_model(std::mt19937_64& rng, bool with_coupling) {
  std::vector<std::pair<int, std::uint32_t>> shapes;
  if (with_coupling) shapes.emplace_back(1, 6u);
  const std::uint32_t dims[] = {7, 5, 4};
  const std::uint32_t ranks[] = {3, 2, 2};
  return random_model(dims, ranks, CoreStructure::DenseTucker, shapes, 1.0,
                      rng);
}

double model_predict(const FactorModel& m,
                     std::span<const std::uint32_t> idx) {
  std::vector<const double*> rows;
  for (std::size_t n = 0; n < idx.size(); ++n)
    rows.push_back(m.factors[n].row(idx[n]).data());
  return predict_entry(m.core, rows);
}

double coupled_predict(const FactorModel& m, std::size_t c, std::uint32_t j1,
                       std::uint32_t j2) {
  auto u = m.factors[m.couplings[c].mode].row(j1);
  auto v = m.couplings[c].factor.row(j2);
  double acc = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) acc += u[k] * v[k];
  return acc;
}

}  // namespace

TEST_CASE("predict_entry: zero core gives zero") {
  CoreTensor core = CoreTensor::zeros({2, 3}, CoreStructure::DenseTucker);
  std::mt19937_64 rng(1);
  auto rows = random_rows(core.ranks(), rng);
  CHECK(predict_entry(core, rows.ptrs) == 0.0);
}

TEST_CASE("predict_entry: identity core selects g11") {
  CoreTensor core({2, 2}, CoreStructure::DenseTucker, {1, 0, 0, 1});
  const double u1[] = {1.0, 0.0};
  const double u2[] = {1.0, 0.0};
  const double* rows[] = {u1, u2};
  CHECK(predict_entry(core, rows) == 1.0);
}

TEST_CASE("predict_entry matches the brute-force oracle") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    CoreTensor core = random_core({2, 2, 2}, rng);
    auto rows = random_rows(core.ranks(), rng);
    CHECK(rel_diff(predict_entry(core, rows.ptrs),
                   oracle_predict(core, rows.ptrs)) <= 1e-12);
  }
}

TEST_CASE("predict_entry: CP core equals the CP formula and the dense view") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 30; ++rep) {
    CoreTensor cp = random_core({3, 3, 3}, rng, -1, 1,
                                CoreStructure::HyperDiagonalCp);
    auto rows = random_rows(cp.ranks(), rng);

    double by_formula = 0.0;
    for (std::uint32_t k = 0; k < 3; ++k) {
      double p = cp.stored()[k];
      for (int n = 0; n < 3; ++n) p *= rows.ptrs[n][k];
      by_formula += p;
    }
    CHECK(rel_diff(predict_entry(cp, rows.ptrs), by_formula) <= 1e-12);
    CHECK(rel_diff(predict_entry(cp, rows.ptrs),
                   oracle_predict(cp, rows.ptrs)) <= 1e-12);
  }
}

TEST_CASE("contract_all_but: zero core gives the zero vector") {
  CoreTensor core = CoreTensor::zeros({2, 2}, CoreStructure::DenseTucker);
  std::mt19937_64 rng(2);
  auto rows = random_rows(core.ranks(), rng);
  double out[2] = {9, 9};
  contract_all_but(core, rows.ptrs, 0, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
}

TEST_CASE("contract_all_but: hand-computed 2x2 case") {
  CoreTensor core({2, 2}, CoreStructure::DenseTucker, {1, 2, 3, 4});
  const double u1[] = {0.0, 0.0};  // skipped
  const double u2[] = {1.0, 1.0};
  const double* rows[] = {u1, u2};
  double out[2];
  contract_all_but(core, rows, 0, out);
  CHECK(out[0] == 3.0);
  CHECK(out[1] == 7.0);
}

TEST_CASE("contract_all_but dotted with the skipped row equals predict") {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 30; ++rep) {
    for (auto structure :
         {CoreStructure::DenseTucker, CoreStructure::HyperDiagonalCp}) {
      std::vector<std::uint32_t> ranks =
          structure == CoreStructure::DenseTucker
              ? std::vector<std::uint32_t>{2, 3, 2}
              : std::vector<std::uint32_t>{3, 3, 3};
      CoreTensor core = random_core(ranks, rng, -1, 1, structure);
      auto rows = random_rows(core.ranks(), rng);
      const double x = predict_entry(core, rows.ptrs);
      for (int n = 0; n < 3; ++n) {
        std::vector<double> out(core.ranks()[n]);
        contract_all_but(core, rows.ptrs, n, out);
        double dot = 0.0;
        for (std::size_t k = 0; k < out.size(); ++k)
          dot += out[k] * rows.ptrs[n][k];
        CHECK(rel_diff(dot, x) <= 1e-12);
      }
    }
  }
}

TEST_CASE("core_mode_product: identity leaves the core unchanged") {
  std::mt19937_64 rng(3);
  CoreTensor core = random_core({2, 3, 2}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  CoreTensor out = core_mode_product(core, eye, 1);
  for (std::size_t i = 0; i < core.dense_size(); ++i)
    CHECK(out.stored()[i] == core.stored()[i]);
}

TEST_CASE("core_mode_product: mode-1 product is R times the matricization") {
  std::mt19937_64 rng(4);
  CoreTensor core = random_core({3, 4}, rng);
  std::vector<double> r(9);
  for (double& v : r) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  CoreTensor out = core_mode_product(core, r, 0);
  // For an order-2 core, G x_1 R is the matrix product R * G.
  for (std::uint32_t a = 0; a < 3; ++a)
    for (std::uint32_t b = 0; b < 4; ++b) {
      double expect = 0.0;
      for (std::uint32_t k = 0; k < 3; ++k)
        expect += r[a * 3 + k] * core.stored()[k * 4 + b];
      CHECK(rel_diff(out.stored()[a * 4 + b], expect) <= 1e-12);
    }
}

TEST_CASE("core_mode_product: products on different modes commute") {
  std::mt19937_64 rng(8);
  CoreTensor core = random_core({2, 3, 2}, rng);
  std::vector<double> r(4), s(9);
  for (double& v : r) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (double& v : s) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  CoreTensor ab = core_mode_product(core_mode_product(core, r, 0), s, 1);
  CoreTensor ba = core_mode_product(core_mode_product(core, s, 1), r, 0);
  for (std::size_t i = 0; i < ab.dense_size(); ++i)
    CHECK(rel_diff(ab.stored()[i], ba.stored()[i]) <= 1e-12);
}

TEST_CASE("core_mode_product of a CP core matches its dense view") {
  std::mt19937_64 rng(12);
  CoreTensor cp =
      random_core({3, 3, 3}, rng, -1, 1, CoreStructure::HyperDiagonalCp);
  CoreTensor dense = CoreTensor::zeros({3, 3, 3}, CoreStructure::DenseTucker);
  for (std::uint32_t k = 0; k < 3; ++k)
    dense.stored()[k * 9 + k * 3 + k] = cp.stored()[k];
  std::vector<double> r(9);
  for (double& v : r) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  CoreTensor a = core_mode_product(cp, r, 1);
  CoreTensor b = core_mode_product(dense, r, 1);
  for (std::size_t i = 0; i < a.dense_size(); ++i)
    CHECK(rel_diff(a.stored()[i], b.stored()[i]) <= 1e-12);
}

TEST_CASE("finalize_orthogonalize: orthonormal input is a fixed point") {
  // Columns of each factor picked from identity-like patterns.
  FactorModel m{
      CoreTensor({2, 2}, CoreStructure::DenseTucker, {1, 2, 3, 4}),
      {FactorMatrix(3, 2, {1, 0, 0, 1, 0, 0}),
       FactorMatrix(4, 2, {0, 0, 1, 0, 0, 1, 0, 0})},
      {}};
  FactorModel before = m;
  finalize_orthogonalize(m);
  for (std::size_t n = 0; n < m.factors.size(); ++n)
    for (std::size_t i = 0; i < m.factors[n].data().size(); ++i)
      CHECK(std::abs(m.factors[n].data()[i] - before.factors[n].data()[i]) <=
            1e-12);
  for (std::size_t i = 0; i < m.core.stored().size(); ++i)
    CHECK(std::abs(m.core.stored()[i] - before.core.stored()[i]) <= 1e-12);
}

TEST_CASE("finalize_orthogonalize preserves predictions and orthogonalizes") {
  std::mt19937_64 rng(10);
  FactorModel m = small_random_model(rng, true);
  FactorModel before = m;

  std::vector<std::array<std::uint32_t, 3>> samples;
  for (int i = 0; i < 200; ++i)
    samples.push_back({static_cast<std::uint32_t>(rng() % 7),
                       static_cast<std::uint32_t>(rng() % 5),
                       static_cast<std::uint32_t>(rng() % 4)});
  std::vector<std::pair<std::uint32_t, std::uint32_t>> msamples;
  for (int i = 0; i < 200; ++i)
    msamples.push_back({static_cast<std::uint32_t>(rng() % 5),
                        static_cast<std::uint32_t>(rng() % 6)});

  finalize_orthogonalize(m);

  for (const auto& s : samples) {
    std::vector<std::uint32_t> idx(s.begin(), s.end());
    CHECK(std::abs(model_predict(m, idx) - model_predict(before, idx)) <=
          1e-9);
  }
  for (const auto& [j1, j2] : msamples)
    CHECK(std::abs(coupled_predict(m, 0, j1, j2) -
                   coupled_predict(before, 0, j1, j2)) <= 1e-9);

  for (const auto& f : m.factors) {
    for (std::uint32_t a = 0; a < f.cols(); ++a)
      for (std::uint32_t b = 0; b < f.cols(); ++b) {
        double dot = 0.0;
        for (std::uint32_t i = 0; i < f.rows(); ++i)
          dot += f.row(i)[a] * f.row(i)[b];
        CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) <= 1e-9);
      }
  }
}

TEST_CASE("finalize_orthogonalize is deterministic") {
  std::mt19937_64 rng(22);
  FactorModel a = small_random_model(rng, true);
  FactorModel b = a;
  finalize_orthogonalize(a);
  finalize_orthogonalize(b);
  CHECK(std::equal(a.core.stored().begin(), a.core.stored().end(),
                   b.core.stored().begin()));
  for (std::size_t n = 0; n < a.factors.size(); ++n)
    CHECK(std::equal(a.factors[n].data().begin(), a.factors[n].data().end(),
                     b.factors[n].data().begin()));
}

TEST_CASE("finalize_orthogonalize survives rank deficiency") {
  // Second column equals the first: R has a zero diagonal entry.
  FactorModel m{CoreTensor({2, 2}, CoreStructure::DenseTucker, {1, 0, 0, 1}),
                {FactorMatrix(3, 2, {1, 1, 2, 2, 3, 3}),
                 FactorMatrix(3, 2, {1, 0, 0, 1, 1, 1})},
                {}};
  FactorModel before = m;
  finalize_orthogonalize(m);
  for (std::uint32_t i = 0; i < 3; ++i)
    for (std::uint32_t j = 0; j < 3; ++j) {
      std::vector<std::uint32_t> idx{i, j};
      CHECK(std::abs(model_predict(m, idx) - model_predict(before, idx)) <=
            1e-9);
    }
}

TEST_CASE("finalize_orthogonalize rejects more columns than rows") {
  FactorModel m{CoreTensor({3, 2}, CoreStructure::DenseTucker,
                           std::vector<double>(6, 1.0)),
                {FactorMatrix(2, 3, std::vector<double>(6, 0.5)),
                 FactorMatrix(2, 2, std::vector<double>(4, 0.5))},
                {}};
  CHECK_THROWS_AS(finalize_orthogonalize(m), ValidationError);
}

TEST_CASE("model dump round-trips through save/load") {
  std::mt19937_64 rng(30);
  FactorModel m = small_random_model(rng, true);
  auto p = std::filesystem::temp_directory_path() / "model.txt";
  save_model(p, m);
  FactorModel back = load_model(p);
  CHECK(std::equal(m.core.stored().begin(), m.core.stored().end(),
                   back.core.stored().begin()));
  REQUIRE(back.factors.size() == m.factors.size());
  for (std::size_t n = 0; n < m.factors.size(); ++n)
    CHECK(std::equal(m.factors[n].data().begin(), m.factors[n].data().end(),
                     back.factors[n].data().begin()));
  REQUIRE(back.couplings.size() == 1);
  CHECK(back.couplings[0].mode == m.couplings[0].mode);
  CHECK(std::equal(m.couplings[0].factor.data().begin(),
                   m.couplings[0].factor.data().end(),
                   back.couplings[0].factor.data().begin()));
}

TEST_CASE("CP model dump loads as an equivalent dense model") {
  std::mt19937_64 rng(31);
  const std::uint32_t dims[] = {5, 4, 6};
  const std::uint32_t ranks[] = {2, 2, 2};
  FactorModel cp = random_model(dims, ranks, CoreStructure::HyperDiagonalCp,
                                {}, 1.0, rng);
  auto p = std::filesystem::temp_directory_path() / "cp_model.txt";
  save_model(p, cp);
  FactorModel dense = load_model(p);
  CHECK(dense.core.structure() == CoreStructure::DenseTucker);
  for (std::uint32_t i = 0; i < 5; ++i) {
    std::vector<std::uint32_t> idx{i, i % 4, i % 6};
    CHECK(rel_diff(model_predict(cp, idx), model_predict(dense, idx)) <=
          1e-12);
  }
}
