#include "cmtf/sparse_data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "cmtf/rng.hpp"

namespace cmtf {

namespace {

void check_entries(const std::vector<std::uint32_t>& dims,
                   const std::vector<std::uint32_t>& indices,
                   const std::vector<double>& values, const char* what) {
  const std::size_t order = dims.size();
  if (order < 2 && std::string(what) == "tensor")
    throw ValidationError("tensor order must be at least 2");
  for (std::uint32_t d : dims)
    if (d == 0) throw ValidationError("mode sizes must be positive");
  if (indices.size() != values.size() * order)
    throw ValidationError("index/value length mismatch");

  const std::size_t nnz = values.size();
  for (std::size_t e = 0; e < nnz; ++e) {
    for (std::size_t n = 0; n < order; ++n) {
      std::uint32_t k = indices[e * order + n];
      if (k >= dims[n])
        throw ValidationError(std::string(what) + " index out of range: mode " +
                              std::to_string(n + 1) + " index " +
                              std::to_string(k + 1) + " > size " +
                              std::to_string(dims[n]));
    }
    if (!std::isfinite(values[e]))
      throw ValidationError(std::string(what) + " value is not finite");
  }

  // Duplicate detection: sort entry ids lexicographically by index tuple.
  std::vector<std::uint32_t> ids(nnz);
  std::iota(ids.begin(), ids.end(), 0u);
  auto tuple_of = [&](std::uint32_t e) {
    return std::span<const std::uint32_t>(indices.data() + e * order, order);
  };
  std::sort(ids.begin(), ids.end(), [&](std::uint32_t a, std::uint32_t b) {
    auto ta = tuple_of(a), tb = tuple_of(b);
    return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(),
                                        tb.end());
  });
  for (std::size_t i = 1; i < nnz; ++i) {
    auto ta = tuple_of(ids[i - 1]), tb = tuple_of(ids[i]);
    if (std::equal(ta.begin(), ta.end(), tb.begin())) {
      std::string msg = std::string("duplicate ") + what + " index (";
      for (std::size_t n = 0; n < order; ++n)
        msg += (n ? " " : "") + std::to_string(tb[n] + 1);
      throw ValidationError(msg + ")");
    }
  }
}

struct ParsedFile {
  std::vector<std::uint32_t> header;  // empty when absent
  std::size_t tokens_per_entry = 0;
  std::vector<std::uint32_t> indices;  // 0-based
  std::vector<double> values;
};

bool is_integer_token(const std::string& tok) {
  if (tok.empty()) return false;
  std::size_t i = tok[0] == '+' ? 1 : 0;
  if (i == tok.size()) return false;
  for (; i < tok.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(tok[i]))) return false;
  return true;
}

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(std::move(tok));
  return out;
}

std::uint32_t parse_index(const std::string& tok, std::size_t lineno) {
  long long v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw ParseError("expected an integer index, got '" + tok + "' (line " +
                     std::to_string(lineno) + ")");
  if (v < 1)
    throw ParseError("index must be >= 1 (line " + std::to_string(lineno) +
                     ")");
  if (v > 0xffffffffLL)
    throw ParseError("index too large (line " + std::to_string(lineno) + ")");
  return static_cast<std::uint32_t>(v);
}

double parse_value(const std::string& tok, std::size_t lineno) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    if (!std::isfinite(v))
      throw ParseError("value is not finite (line " + std::to_string(lineno) +
                       ")");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("expected a numeric value, got '" + tok + "' (line " +
                     std::to_string(lineno) + ")");
  }
}

// Shared line-oriented reader for tensor and matrix files. A leading line
// whose token count is one less than the entry lines' (all integers) is the
// dims header; a lone all-integer line is a header with no entries.
ParsedFile parse_coo_file(const std::filesystem::path& path,
                          int expected_order) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open '" + path.string() + "'");

  ParsedFile out;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<std::string>> pending;  // first two data lines
  std::vector<std::size_t> pending_lineno;
  bool resolved = false;

  auto consume_entry = [&](const std::vector<std::string>& toks,
                           std::size_t ln) {
    if (toks.size() != out.tokens_per_entry)
      throw ParseError("expected " + std::to_string(out.tokens_per_entry) +
                       " fields, got " + std::to_string(toks.size()) +
                       " (line " + std::to_string(ln) + ")");
    for (std::size_t n = 0; n + 1 < toks.size(); ++n)
      out.indices.push_back(parse_index(toks[n], ln) - 1);
    out.values.push_back(parse_value(toks.back(), ln));
  };

  auto resolve = [&]() {
    resolved = true;
    const auto& first = pending[0];
    bool first_all_int = std::all_of(first.begin(), first.end(),
                                     [](const auto& t) { return is_integer_token(t); });
    bool header = false;
    if (pending.size() >= 2 && first.size() + 1 == pending[1].size() &&
        first_all_int) {
      header = true;
    } else if (pending.size() == 1 && first_all_int &&
               (expected_order == 0 ||
                static_cast<int>(first.size()) == expected_order)) {
      header = true;  // header-only file: an empty tensor/matrix
    }
    if (header) {
      for (const auto& tok : first)
        out.header.push_back(parse_index(tok, pending_lineno[0]));
      out.tokens_per_entry = first.size() + 1;
    } else {
      if (first.size() < 2)
        throw ParseError("entry line needs at least one index and a value "
                         "(line " + std::to_string(pending_lineno[0]) + ")");
      out.tokens_per_entry = first.size();
      consume_entry(first, pending_lineno[0]);
    }
    for (std::size_t i = 1; i < pending.size(); ++i)
      consume_entry(pending[i], pending_lineno[i]);
    pending.clear();
    pending_lineno.clear();
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    if (!resolved) {
      pending.push_back(std::move(toks));
      pending_lineno.push_back(lineno);
      if (pending.size() == 2) resolve();
      continue;
    }
    consume_entry(toks, lineno);
  }
  if (!resolved) {
    if (pending.empty())
      throw ParseError("'" + path.string() + "' contains no data");
    resolve();
  }

  if (expected_order != 0) {
    int order = static_cast<int>(out.tokens_per_entry) - 1;
    if (order != expected_order)
      throw ParseError("'" + path.string() + "': expected " +
                       std::to_string(expected_order) +
                       " indices per entry, found " + std::to_string(order));
  }
  return out;
}

std::vector<std::uint32_t> infer_dims(const ParsedFile& f) {
  const std::size_t order = f.tokens_per_entry - 1;
  if (!f.header.empty()) return f.header;
  std::vector<std::uint32_t> dims(order, 0);
  const std::size_t nnz = f.values.size();
  for (std::size_t e = 0; e < nnz; ++e)
    for (std::size_t n = 0; n < order; ++n)
      dims[n] = std::max(dims[n], f.indices[e * order + n] + 1);
  return dims;
}

}  // namespace

SparseTensor::SparseTensor(std::vector<std::uint32_t> dims,
                           std::vector<std::uint32_t> indices,
                           std::vector<double> values)
    : dims_(std::move(dims)),
      indices_(std::move(indices)),
      values_(std::move(values)) {
  check_entries(dims_, indices_, values_, "tensor");
}

CoupledMatrix::CoupledMatrix(int coupled_mode, std::uint32_t rows,
                             std::uint32_t cols,
                             std::vector<std::uint32_t> indices,
                             std::vector<double> values, double weight)
    : mode_(coupled_mode),
      rows_(rows),
      cols_(cols),
      indices_(std::move(indices)),
      values_(std::move(values)),
      weight_(weight) {
  if (mode_ < 0) throw ValidationError("coupled mode must be >= 1");
  if (!(weight_ > 0)) throw ValidationError("lambda_m must be positive");
  check_entries({rows_, cols_}, indices_, values_, "matrix");
}

SparseTensor load_tensor(const std::filesystem::path& path) {
  ParsedFile f = parse_coo_file(path, 0);
  if (f.tokens_per_entry < 3)
    throw ParseError("'" + path.string() + "': tensor order must be at least 2");
  std::vector<std::uint32_t> dims = infer_dims(f);
  return SparseTensor(std::move(dims), std::move(f.indices),
                      std::move(f.values));
}

CoupledMatrix load_matrix(const std::filesystem::path& path, int coupled_mode,
                          double weight, const SparseTensor& tensor) {
  if (coupled_mode < 1 || coupled_mode > tensor.order())
    throw ValidationError("coupled mode " + std::to_string(coupled_mode) +
                          " out of range 1.." + std::to_string(tensor.order()));
  if (!(weight > 0)) throw ValidationError("lambda_m must be positive");

  ParsedFile f = parse_coo_file(path, 2);
  std::vector<std::uint32_t> dims = infer_dims(f);
  const std::uint32_t tensor_rows = tensor.dims()[coupled_mode - 1];
  if (!f.header.empty() && dims[0] != tensor_rows)
    throw ValidationError("'" + path.string() + "': matrix has " +
                          std::to_string(dims[0]) + " rows but mode " +
                          std::to_string(coupled_mode) + " has size " +
                          std::to_string(tensor_rows));
  if (dims[0] > tensor_rows)
    throw ValidationError("'" + path.string() +
                          "': matrix row index exceeds size of mode " +
                          std::to_string(coupled_mode));
  return CoupledMatrix(coupled_mode - 1, tensor_rows, dims[1],
                       std::move(f.indices), std::move(f.values), weight);
}

namespace {

void write_coo(const std::filesystem::path& path,
               std::span<const std::uint32_t> dims,
               const std::vector<std::uint32_t>& indices,
               const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  const std::size_t order = dims.size();
  for (std::size_t n = 0; n < order; ++n)
    out << dims[n] << (n + 1 < order ? ' ' : '\n');
  char buf[64];
  for (std::size_t e = 0; e < values.size(); ++e) {
    for (std::size_t n = 0; n < order; ++n)
      out << indices[e * order + n] + 1 << ' ';
    std::snprintf(buf, sizeof buf, "%.17g", values[e]);
    out << buf << '\n';
  }
  if (!out) throw ParseError("write failed for '" + path.string() + "'");
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const SparseTensor& t) {
  write_coo(path, t.dims(), t.indices(), t.values());
}

void save_matrix(const std::filesystem::path& path, const CoupledMatrix& m) {
  const std::uint32_t dims[2] = {m.rows(), m.cols()};
  write_coo(path, dims, m.indices(), m.values());
}

std::pair<SparseTensor, SparseTensor> split_train_test(const SparseTensor& t,
                                                       double test_fraction,
                                                       std::uint64_t seed) {
  if (t.nnz() == 0) throw ValidationError("cannot split an empty tensor");
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
    throw ValidationError("test fraction must be in (0, 1)");

  const std::size_t nnz = t.nnz();
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(nnz)));

  std::vector<std::size_t> ids(nnz);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  auto rng = make_rng(seed, RngStream::Split);
  for (std::size_t i = nnz - 1; i > 0; --i)
    std::swap(ids[i], ids[bounded(rng, i + 1)]);

  const std::size_t order = t.dims().size();
  auto gather = [&](std::size_t lo, std::size_t hi) {
    std::vector<std::uint32_t> idx;
    std::vector<double> vals;
    idx.reserve((hi - lo) * order);
    vals.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      auto span = t.index(ids[i]);
      idx.insert(idx.end(), span.begin(), span.end());
      vals.push_back(t.value(ids[i]));
    }
    return SparseTensor(t.dims(), std::move(idx), std::move(vals));
  };
  return {gather(n_test, nnz), gather(0, n_test)};
}

ModeIndexCounts count_mode_occurrences(
    const SparseTensor& tensor, const std::vector<CoupledMatrix>& matrices) {
  ModeIndexCounts counts;
  const std::size_t order = tensor.dims().size();
  counts.tensor.resize(order);
  for (std::size_t n = 0; n < order; ++n)
    counts.tensor[n].assign(tensor.dims()[n], 0);
  for (std::size_t e = 0; e < tensor.nnz(); ++e) {
    auto idx = tensor.index(e);
    for (std::size_t n = 0; n < order; ++n) ++counts.tensor[n][idx[n]];
  }
  counts.matrix_cols.reserve(matrices.size());
  for (const auto& m : matrices) {
    std::vector<std::uint32_t> col(m.cols(), 0);
    for (std::size_t e = 0; e < m.nnz(); ++e) ++col[m.col_index(e)];
    counts.matrix_cols.push_back(std::move(col));
  }
  return counts;
}

DataBundle make_bundle(SparseTensor tensor,
                       std::vector<CoupledMatrix> matrices) {
  for (const auto& m : matrices) {
    if (m.coupled_mode() >= tensor.order())
      throw ValidationError("coupled mode out of range");
    if (m.rows() != tensor.dims()[m.coupled_mode()])
      throw ValidationError("coupled matrix row space does not match mode " +
                            std::to_string(m.coupled_mode() + 1));
  }
  ModeIndexCounts counts = count_mode_occurrences(tensor, matrices);
  return DataBundle{std::move(tensor), std::move(matrices), std::move(counts)};
}

}  // namespace cmtf
