// Command-line front end: train, eval, gen and bench subcommands over the
// core library. Every run that writes files also writes a manifest with the
// resolved configuration so results can be reproduced.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmtf/eval.hpp"
#include "cmtf/model_io.hpp"
#include "cmtf/rng.hpp"
#include "cmtf/synth.hpp"
#include "cmtf/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CoupleArg {
  int mode = 0;
  std::string path;
  double lambda = 10.0;
};

// MODE:PATH:LAMBDA with the path allowed to contain ':'.
CoupleArg parse_couple(const std::string& arg) {
  const auto first = arg.find(':');
  const auto last = arg.rfind(':');
  if (first == std::string::npos || first == last)
    throw cmtf::ValidationError("--couple expects MODE:PATH:LAMBDA, got '" +
                                arg + "'");
  CoupleArg c;
  try {
    c.mode = std::stoi(arg.substr(0, first));
    c.lambda = std::stod(arg.substr(last + 1));
  } catch (const std::exception&) {
    throw cmtf::ValidationError("--couple expects MODE:PATH:LAMBDA, got '" +
                                arg + "'");
  }
  c.path = arg.substr(first + 1, last - first - 1);
  if (c.path.empty())
    throw cmtf::ValidationError("--couple has an empty path in '" + arg + "'");
  return c;
}

std::vector<std::uint32_t> parse_u32_list(const std::string& arg,
                                          const char* what) {
  std::vector<std::uint32_t> out;
  std::string token;
  std::istringstream ss(arg);
  while (std::getline(ss, token, ',')) {
    try {
      const long v = std::stol(token);
      if (v < 1) throw std::out_of_range(token);
      out.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::exception&) {
      throw cmtf::ValidationError(std::string(what) +
                                  " expects a comma-separated list of "
                                  "positive integers, got '" +
                                  arg + "'");
    }
  }
  if (out.empty())
    throw cmtf::ValidationError(std::string(what) + " must not be empty");
  return out;
}

json argv_json(int argc, char** argv) {
  json a = json::array();
  for (int i = 0; i < argc; ++i) a.push_back(argv[i]);
  return a;
}

void write_manifest(const fs::path& path, const json& manifest) {
  std::ofstream out(path);
  out << manifest.dump(2) << '\n';
  if (!out)
    throw cmtf::ParseError("cannot write manifest '" + path.string() + "'");
}

// ---------------------------------------------------------------- train ---

struct TrainArgs {
  std::string tensor_path;
  std::string test_path;
  double split_fraction = 0.0;
  std::string rank_list;
  std::vector<std::string> couples;
  std::string kernel = "opt";
  bool cp = false;
  bool nonneg = false;
  double eta = 1e-3;
  double mu = 0.1;
  double lreg = 0.1;
  int workers = 1;
  int epochs = 100;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

int cmd_train(const TrainArgs& args, const json& argv) {
  using namespace cmtf;
  const fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir);

  SparseTensor full = load_tensor(args.tensor_path);
  std::optional<SparseTensor> test;
  std::optional<SparseTensor> train_half;
  if (args.split_fraction > 0.0) {
    auto [tr, te] = split_train_test(full, args.split_fraction, args.seed);
    train_half = std::move(tr);
    test = std::move(te);
  } else if (!args.test_path.empty()) {
    test = load_tensor(args.test_path);
  }
  const SparseTensor& train_tensor = train_half ? *train_half : full;

  std::vector<CoupledMatrix> matrices;
  std::vector<CoupleArg> couple_args;
  for (const auto& c : args.couples) couple_args.push_back(parse_couple(c));
  for (const auto& c : couple_args)
    matrices.push_back(load_matrix(c.path, c.mode, c.lambda, train_tensor));

  TrainConfig config;
  config.ranks = parse_u32_list(args.rank_list, "--rank");
  config.eta0 = args.eta;
  config.mu = args.mu;
  config.lambda_reg = args.lreg;
  config.workers = args.workers;
  config.max_epochs = args.epochs;
  config.rel_tol = args.tol;
  config.seed = args.seed;
  config.kernel =
      args.kernel == "naive" ? GradientKernel::Naive : GradientKernel::Opt;
  config.core_structure = args.cp ? CoreStructure::HyperDiagonalCp
                                  : CoreStructure::DenseTucker;
  config.nonnegative = args.nonneg;

  DataBundle bundle = make_bundle(train_tensor, std::move(matrices));
  TrainResult result = train(bundle, config);

  const fs::path model_path = out_dir / "model.txt";
  const fs::path log_path = out_dir / "log.csv";
  save_model(model_path, result.model);
  {
    std::ofstream log(log_path);
    write_log_csv(log, result.log);
  }
  fs::path test_path_out;
  if (args.split_fraction > 0.0) {
    test_path_out = out_dir / "test.tns";
    save_tensor(test_path_out, *test);
  }

  json manifest{
      {"command", "train"},
      {"argv", argv},
      {"version", kVersion},
      {"seed", args.seed},
      {"inputs",
       {{"tensor", args.tensor_path},
        {"test", args.test_path},
        {"split", args.split_fraction}}},
      {"config",
       {{"ranks", config.ranks},
        {"eta0", config.eta0},
        {"mu", config.mu},
        {"lambda_reg", config.lambda_reg},
        {"workers", config.workers},
        {"max_epochs", config.max_epochs},
        {"rel_tol", config.rel_tol},
        {"kernel", args.kernel},
        {"cp", args.cp},
        {"nonnegative", args.nonneg}}},
      {"outputs",
       {{"model", model_path.string()}, {"log", log_path.string()}}}};
  json couples_json = json::array();
  for (const auto& c : couple_args)
    couples_json.push_back(
        {{"mode", c.mode}, {"path", c.path}, {"lambda", c.lambda}});
  manifest["inputs"]["couples"] = couples_json;
  if (!test_path_out.empty())
    manifest["outputs"]["test_split"] = test_path_out.string();
  write_manifest(out_dir / "manifest.json", manifest);

  if (!result.log.empty())
    std::printf("epochs=%d train_rmse=%.6g\n",
                result.log.back().epoch, result.log.back().train_rmse);
  if (test) std::printf("test_rmse=%.6g\n", test_rmse(result.model, *test));
  std::printf("model=%s\n", model_path.string().c_str());
  return 0;
}

// ----------------------------------------------------------------- eval ---

struct EvalArgs {
  std::string model_path;
  std::string test_path;
  std::vector<std::string> couples;
  bool json_output = false;
};

int cmd_eval(const EvalArgs& args) {
  using namespace cmtf;
  FactorModel model = load_model(args.model_path);
  SparseTensor test = load_tensor(args.test_path);
  std::vector<CoupledMatrix> matrices;
  for (const auto& c : args.couples) {
    CoupleArg parsed = parse_couple(c);
    matrices.push_back(
        load_matrix(parsed.path, parsed.mode, parsed.lambda, test));
  }
  EvalReport report = evaluate(model, test, matrices);
  if (args.json_output) {
    json j{{"test_rmse", report.test_rmse},
           {"n_entries", report.n_entries},
           {"matrix_rmse", report.matrix_rmse}};
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::printf("test_rmse=%.17g\n", report.test_rmse);
  std::printf("n_entries=%llu\n",
              static_cast<unsigned long long>(report.n_entries));
  for (std::size_t m = 0; m < report.matrix_rmse.size(); ++m)
    std::printf("matrix_rmse_%zu=%.17g\n", m + 1, report.matrix_rmse[m]);
  return 0;
}

// ------------------------------------------------------------------ gen ---

struct GenArgs {
  std::string dims_list;
  std::uint64_t nnz = 0;
  std::string rank_list = "2,2,2";
  double ratio = 0.1;
  double noise = 0.0;
  int couple_mode = 1;
  std::uint32_t cols = 0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  bool dump_truth = false;
};

int cmd_gen(const GenArgs& args, const json& argv) {
  using namespace cmtf;
  const fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir);

  SynthSpec spec;
  spec.dims = parse_u32_list(args.dims_list, "--dims");
  spec.ranks = parse_u32_list(args.rank_list, "--rank");
  if (spec.ranks.size() == 1 && spec.dims.size() > 1)
    spec.ranks.assign(spec.dims.size(), spec.ranks[0]);
  spec.n_entries = args.nnz;
  spec.matrix_ratio = args.ratio;
  spec.noise_stddev = args.noise;
  spec.seed = args.seed;
  spec.coupled_mode = args.couple_mode - 1;
  spec.matrix_cols = args.cols;
  spec.with_matrix = args.ratio > 0.0;

  SynthData data = generate(spec);
  const fs::path tensor_path = out_dir / "tensor.tns";
  save_tensor(tensor_path, data.bundle.tensor);
  fs::path matrix_path;
  if (!data.bundle.matrices.empty()) {
    matrix_path = out_dir / "matrix.mat";
    save_matrix(matrix_path, data.bundle.matrices[0]);
  }
  fs::path truth_path;
  if (args.dump_truth) {
    truth_path = out_dir / "truth_model.txt";
    save_model(truth_path, data.truth);
  }

  json manifest{{"command", "gen"},
                {"argv", argv},
                {"version", kVersion},
                {"seed", args.seed},
                {"config",
                 {{"dims", spec.dims},
                  {"ranks", spec.ranks},
                  {"nnz", spec.n_entries},
                  {"ratio", spec.matrix_ratio},
                  {"noise", spec.noise_stddev},
                  {"couple_mode", args.couple_mode},
                  {"cols", spec.matrix_cols}}},
                {"outputs", {{"tensor", tensor_path.string()}}}};
  if (!matrix_path.empty())
    manifest["outputs"]["matrix"] = matrix_path.string();
  if (!truth_path.empty()) manifest["outputs"]["truth"] = truth_path.string();
  write_manifest(out_dir / "manifest.json", manifest);

  std::printf("tensor=%s entries=%llu\n", tensor_path.string().c_str(),
              static_cast<unsigned long long>(data.bundle.tensor.nnz()));
  if (!matrix_path.empty())
    std::printf("matrix=%s entries=%llu\n", matrix_path.string().c_str(),
                static_cast<unsigned long long>(
                    data.bundle.matrices[0].nnz()));
  return 0;
}

// ---------------------------------------------------------------- bench ---

struct BenchArgs {
  std::string sweep = "workers";
  std::uint64_t nnz = 0;      // 0: sweep default
  std::uint32_t dim = 10000;  // per-mode size for nnz/worker sweeps
  std::string dims_list = "1000,10000,100000";
  std::string workers_list = "1,2,4,8";
  std::uint32_t rank = 8;
  std::string kernel = "opt";
  int epochs = 3;
  double cell_timeout = 600.0;
  std::uint64_t seed = 0;
  std::string out_path;
};

struct BenchCell {
  std::string param;
  double seconds = std::numeric_limits<double>::quiet_NaN();
};

double time_epochs(const cmtf::DataBundle& bundle, cmtf::TrainConfig config,
                   int epochs, double timeout_sec) {
  using clock = std::chrono::steady_clock;
  cmtf::TrainState state = cmtf::make_state(config, bundle);
  const auto cell_start = clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(clock::now() - cell_start).count();
  };
  cmtf::run_epoch(state, bundle, config);  // warmup
  double total = 0.0;
  int measured = 0;
  for (int e = 0; e < epochs; ++e) {
    if (measured > 0 && elapsed() > timeout_sec) {
      std::fprintf(stderr, "bench: cell timeout after %d epochs\n", measured);
      break;
    }
    const auto t0 = clock::now();
    cmtf::run_epoch(state, bundle, config);
    total += std::chrono::duration<double>(clock::now() - t0).count();
    ++measured;
  }
  return measured ? total / measured
                  : std::numeric_limits<double>::quiet_NaN();
}

int cmd_bench(const BenchArgs& args, const json& argv) {
  using namespace cmtf;

  TrainConfig config;
  config.eta0 = 1e-3;
  config.seed = args.seed;
  config.kernel =
      args.kernel == "naive" ? GradientKernel::Naive : GradientKernel::Opt;

  std::vector<BenchCell> cells;
  auto make_bundle_for = [&](std::uint32_t dim, std::uint64_t nnz) {
    SynthSpec spec;
    spec.dims = {dim, dim, dim};
    spec.ranks = {2, 2, 2};
    spec.n_entries = nnz;
    spec.seed = args.seed;
    spec.matrix_ratio = 0.1;
    return generate(spec).bundle;
  };

  config.ranks = {args.rank, args.rank, args.rank};
  if (args.sweep == "dims") {
    const std::uint64_t nnz = args.nnz ? args.nnz : 100000;
    config.workers = 1;
    for (std::uint32_t dim : parse_u32_list(args.dims_list, "--dims")) {
      DataBundle bundle = make_bundle_for(dim, nnz);
      cells.push_back({std::to_string(dim),
                       time_epochs(bundle, config, args.epochs,
                                   args.cell_timeout)});
    }
  } else if (args.sweep == "nnz") {
    config.workers = 1;
    std::vector<std::uint64_t> sizes{10000, 100000, 1000000};
    if (args.nnz) sizes = {args.nnz};
    for (std::uint64_t nnz : sizes) {
      DataBundle bundle = make_bundle_for(args.dim, nnz);
      cells.push_back({std::to_string(nnz),
                       time_epochs(bundle, config, args.epochs,
                                   args.cell_timeout)});
    }
  } else if (args.sweep == "workers") {
    const std::uint64_t nnz = args.nnz ? args.nnz : 1000000;
    DataBundle bundle = make_bundle_for(args.dim, nnz);
    for (std::uint32_t p : parse_u32_list(args.workers_list, "--workers-list")) {
      config.workers = static_cast<int>(p);
      cells.push_back({std::to_string(p),
                       time_epochs(bundle, config, args.epochs,
                                   args.cell_timeout)});
    }
  } else {
    throw ValidationError("--sweep must be dims, nnz or workers");
  }

  std::ostringstream csv;
  csv << "param,seconds_per_epoch,speedup\n";
  const double base = cells.empty() ? 1.0 : cells.front().seconds;
  for (const auto& cell : cells) {
    char line[128];
    std::snprintf(line, sizeof line, "%s,%.6f,%.3f\n", cell.param.c_str(),
                  cell.seconds, base / cell.seconds);
    csv << line;
  }
  if (args.out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(args.out_path);
    out << csv.str();
    if (!out)
      throw ParseError("cannot write '" + args.out_path + "'");
    json manifest{{"command", "bench"},
                  {"argv", argv},
                  {"version", kVersion},
                  {"seed", args.seed},
                  {"outputs", {{"csv", args.out_path}}}};
    write_manifest(fs::path(args.out_path).string() + ".manifest.json",
                   manifest);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse coupled matrix-tensor factorization via lock-free "
               "parallel SGD"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Fit a model to tensor data");
  train_cmd->add_option("--tensor", train_args.tensor_path, "Training tensor")
      ->required();
  auto* test_opt = train_cmd->add_option("--test", train_args.test_path,
                                         "Held-out tensor for reporting");
  train_cmd
      ->add_option("--split", train_args.split_fraction,
                   "Hold out this fraction of entries as the test set")
      ->excludes(test_opt);
  train_cmd->add_option("--rank", train_args.rank_list, "Ranks J1,J2,...")
      ->required();
  train_cmd->add_option("--couple", train_args.couples,
                        "Coupled matrix MODE:PATH:LAMBDA (repeatable)");
  train_cmd->add_option("--kernel", train_args.kernel, "naive or opt")
      ->check(CLI::IsMember({"naive", "opt"}));
  train_cmd->add_flag("--cp", train_args.cp, "Hyper-diagonal (CP) core");
  train_cmd->add_flag("--nonneg", train_args.nonneg,
                      "Projected-gradient non-negative mode");
  train_cmd->add_option("--eta", train_args.eta, "Initial learning rate");
  train_cmd->add_option("--mu", train_args.mu, "Learning-rate decay");
  train_cmd->add_option("--lreg", train_args.lreg, "Regularization");
  train_cmd->add_option("--workers", train_args.workers, "Parallel workers");
  train_cmd->add_option("--epochs", train_args.epochs, "Maximum epochs");
  train_cmd->add_option("--tol", train_args.tol, "Relative RMSE tolerance");
  train_cmd->add_option("--seed", train_args.seed, "Random seed");
  train_cmd->add_option("--out", train_args.out_dir, "Output directory");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model");
  eval_cmd->add_option("--model", eval_args.model_path, "Model dump")
      ->required();
  eval_cmd->add_option("--test", eval_args.test_path, "Test tensor")
      ->required();
  eval_cmd->add_option("--couple", eval_args.couples,
                       "Coupled matrix MODE:PATH:LAMBDA (repeatable)");
  eval_cmd->add_flag("--json", eval_args.json_output, "JSON output");

  GenArgs gen_args;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic data");
  gen_cmd->add_option("--dims", gen_args.dims_list, "Mode sizes I1,I2,...")
      ->required();
  gen_cmd->add_option("--nnz", gen_args.nnz, "Observed entries")->required();
  gen_cmd->add_option("--rank", gen_args.rank_list, "Planted ranks");
  gen_cmd->add_option("--ratio", gen_args.ratio,
                      "Matrix entries as a fraction of tensor entries");
  gen_cmd->add_option("--noise", gen_args.noise, "Gaussian noise stddev");
  gen_cmd->add_option("--couple-mode", gen_args.couple_mode,
                      "Mode the matrix couples to (1-based)");
  gen_cmd->add_option("--cols", gen_args.cols,
                      "Matrix columns (default: coupled mode size)");
  gen_cmd->add_option("--seed", gen_args.seed, "Random seed");
  gen_cmd->add_option("--out", gen_args.out_dir, "Output directory");
  gen_cmd->add_flag("--truth", gen_args.dump_truth,
                    "Also dump the planted model");

  BenchArgs bench_args;
  auto* bench_cmd =
      app.add_subcommand("bench", "Timed epoch sweeps, CSV output");
  bench_cmd->add_option("--sweep", bench_args.sweep, "dims, nnz or workers")
      ->check(CLI::IsMember({"dims", "nnz", "workers"}));
  bench_cmd->add_option("--nnz", bench_args.nnz, "Tensor entries");
  bench_cmd->add_option("--dim", bench_args.dim, "Per-mode size");
  bench_cmd->add_option("--dims", bench_args.dims_list,
                        "Sizes for the dims sweep");
  bench_cmd->add_option("--workers-list", bench_args.workers_list,
                        "Worker counts for the workers sweep");
  bench_cmd->add_option("--rank", bench_args.rank, "Uniform rank J");
  bench_cmd->add_option("--kernel", bench_args.kernel, "naive or opt")
      ->check(CLI::IsMember({"naive", "opt"}));
  bench_cmd->add_option("--epochs", bench_args.epochs, "Timed epochs per cell");
  bench_cmd->add_option("--cell-timeout", bench_args.cell_timeout,
                        "Per-cell time budget in seconds");
  bench_cmd->add_option("--seed", bench_args.seed, "Random seed");
  bench_cmd->add_option("--out", bench_args.out_path, "CSV file (stdout if "
                        "omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const json argv_record = argv_json(argc, argv);
  try {
    if (train_cmd->parsed()) return cmd_train(train_args, argv_record);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (gen_cmd->parsed()) return cmd_gen(gen_args, argv_record);
    if (bench_cmd->parsed()) return cmd_bench(bench_args, argv_record);
  } catch (const cmtf::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
