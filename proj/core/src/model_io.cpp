#include "cmtf/model_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmtf/errors.hpp"

namespace cmtf {

namespace {

void write_values(std::ofstream& out, std::span<const double> values,
                  std::size_t per_line) {
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    out << buf << ((i + 1) % per_line == 0 ? '\n' : ' ');
  }
  if (values.size() % per_line != 0) out << '\n';
}

// Line-aware reader: section headers and the ranks line occupy whole lines;
// value blocks are free-form token runs.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path) {
    if (!in_) throw ParseError("cannot open '" + path.string() + "'");
  }

  // Tokens of the next non-blank line; empty at end of file.
  std::vector<std::string> next_line() {
    if (pos_ < line_.size())
      throw ParseError("model file: unexpected extra tokens before '" +
                       line_[pos_] + "'");
    std::string raw;
    while (std::getline(in_, raw)) {
      line_ = tokenize(raw);
      pos_ = line_.size();  // consumed as a unit
      if (!line_.empty()) return line_;
    }
    return {};
  }

  double next_value() {
    while (pos_ >= line_.size()) {
      std::string raw;
      if (!std::getline(in_, raw))
        throw ParseError("model file ends inside a value block");
      line_ = tokenize(raw);
      pos_ = 0;
    }
    const std::string& tok = line_[pos_++];
    try {
      std::size_t consumed = 0;
      const double v = std::stod(tok, &consumed);
      if (consumed != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw ParseError("model file: expected a number, got '" + tok + "'");
    }
  }

 private:
  static std::vector<std::string> tokenize(std::string raw) {
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::vector<std::string> out;
    std::istringstream ss(raw);
    std::string tok;
    while (ss >> tok) out.push_back(std::move(tok));
    return out;
  }

  std::ifstream in_;
  std::vector<std::string> line_;
  std::size_t pos_ = 0;
};

std::uint32_t to_u32(const std::string& tok) {
  try {
    const unsigned long v = std::stoul(tok);
    if (v == 0 || v > 0xffffffffUL) throw std::out_of_range(tok);
    return static_cast<std::uint32_t>(v);
  } catch (const std::exception&) {
    throw ParseError("model file: expected a positive integer, got '" + tok +
                     "'");
  }
}

}  // namespace

void save_model(const std::filesystem::path& path, const FactorModel& model) {
  validate_model(model);
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");

  const auto& ranks = model.core.ranks();
  out << "CORE\n";
  for (std::size_t n = 0; n < ranks.size(); ++n)
    out << ranks[n] << (n + 1 < ranks.size() ? ' ' : '\n');
  if (model.core.structure() == CoreStructure::HyperDiagonalCp) {
    // Materialize the dense view so the format stays uniform.
    std::vector<double> dense(model.core.dense_size(), 0.0);
    std::size_t step = 0;
    for (std::size_t s : model.core.strides()) step += s;
    for (std::uint32_t k = 0; k < ranks[0]; ++k)
      dense[k * step] = model.core.stored()[k];
    write_values(out, dense, ranks.back());
  } else {
    write_values(out, model.core.stored(), ranks.back());
  }

  for (std::size_t n = 0; n < model.factors.size(); ++n) {
    const FactorMatrix& f = model.factors[n];
    out << "FACTOR " << n + 1 << '\n' << f.rows() << ' ' << f.cols() << '\n';
    write_values(out, f.data(), f.cols());
  }
  for (const auto& c : model.couplings) {
    out << "COUPLED " << c.mode + 1 << '\n'
        << c.factor.rows() << ' ' << c.factor.cols() << '\n';
    write_values(out, c.factor.data(), c.factor.cols());
  }
  if (!out) throw ParseError("write failed for '" + path.string() + "'");
}

FactorModel load_model(const std::filesystem::path& path) {
  Reader reader(path);

  auto header = reader.next_line();
  if (header.size() != 1 || header[0] != "CORE")
    throw ParseError("model file must start with a CORE section");

  std::vector<std::uint32_t> ranks;
  for (const auto& tok : reader.next_line()) ranks.push_back(to_u32(tok));
  if (ranks.empty()) throw ParseError("model file: missing ranks line");
  std::size_t core_size = 1;
  for (std::uint32_t j : ranks) core_size *= j;
  std::vector<double> core_values(core_size);
  for (double& v : core_values) v = reader.next_value();
  CoreTensor core(ranks, CoreStructure::DenseTucker, std::move(core_values));

  std::vector<FactorMatrix> factors;
  std::vector<Coupling> couplings;
  for (auto section = reader.next_line(); !section.empty();
       section = reader.next_line()) {
    if (section.size() != 2)
      throw ParseError("model file: malformed section header");
    const bool is_factor = section[0] == "FACTOR";
    const bool is_coupled = section[0] == "COUPLED";
    if (!is_factor && !is_coupled)
      throw ParseError("model file: unknown section '" + section[0] + "'");
    const std::uint32_t tag = to_u32(section[1]);

    auto shape = reader.next_line();
    if (shape.size() != 2)
      throw ParseError("model file: section needs a 'rows cols' line");
    const std::uint32_t rows = to_u32(shape[0]);
    const std::uint32_t cols = to_u32(shape[1]);
    std::vector<double> values(std::size_t(rows) * cols);
    for (double& v : values) v = reader.next_value();

    if (is_factor) {
      if (tag != factors.size() + 1)
        throw ParseError("model file: FACTOR sections must appear in order");
      factors.emplace_back(rows, cols, std::move(values));
    } else {
      couplings.push_back(
          Coupling{static_cast<int>(tag) - 1,
                   FactorMatrix(rows, cols, std::move(values))});
    }
  }

  FactorModel model{std::move(core), std::move(factors),
                    std::move(couplings)};
  validate_model(model);
  return model;
}

}  // namespace cmtf
