#pragma once

#include <cstdint>
#include <vector>

#include "cmtf/sparse_data.hpp"
#include "cmtf/tucker.hpp"

namespace cmtf {

/// Recipe for a planted low-rank instance: a random ground-truth model is
/// sampled, then distinct entries are observed from it (optionally with
/// Gaussian noise) together with one coupled matrix.
struct SynthSpec {
  std::vector<std::uint32_t> dims;
  std::uint64_t n_entries = 0;
  std::vector<std::uint32_t> ranks;
  double noise_stddev = 0.0;
  std::uint64_t seed = 0;

  bool with_matrix = true;
  double matrix_ratio = 0.1;  // |observed matrix| / |observed tensor|
  int coupled_mode = 0;       // 0-based
  std::uint32_t matrix_cols = 0;  // 0: same as the coupled mode's size
  double matrix_weight = 10.0;
};

struct SynthData {
  DataBundle bundle;
  FactorModel truth;
};

SynthData generate(const SynthSpec& spec);

}  // namespace cmtf
