#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fwa/emulator.hpp"
#include "fwa/experiments.hpp"

namespace {

using namespace fwa;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

struct GlobalOpts {
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig load_config(const GlobalOpts& g, const std::string& experiment,
                             const ExperimentConfig& defaults) {
  ExperimentConfig cfg = defaults;
  if (!g.config_path.empty()) cfg = config_from_json(Json::parse(read_file(g.config_path)));
  cfg.experiment = experiment;
  if (g.seed_set) cfg.seeds = {g.seed};
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  return cfg;
}

int cmd_emulate(const GlobalOpts& g, const std::string& construction,
                const std::string& target_path, const std::string& input_path, double eps,
                const std::string& out_path) {
  (void)g;
  const AlgorithmSpec spec = algorithm_spec_from_json(read_file(target_path));
  if (spec.kind != "target_head")
    throw std::invalid_argument("emulate: target spec must have kind target_head");
  const Matrix X = load_csv(input_path);
  const bool rowstack = construction == "thm33";
  PromptEncoding prompt = rowstack ? encode_rowstack(X, spec.W_K, spec.W_Q, spec.W_V)
                                   : encode_target_head(X, spec.W_K, spec.W_Q, spec.W_V);
  const FrozenEmulator em = rowstack ? build_thm33(prompt, eps) : build_thm32(prompt, eps);
  const EmulationReport rep = measure_emulation(em, prompt, target_attention_forward(prompt));
  const std::string json = report_to_json(rep, em.plan);
  if (!out_path.empty()) write_file(out_path, json + "\n");
  std::cout << json << '\n';
  std::cout << (rep.measured_error <= eps ? "PASS" : "FAIL") << ": measured "
            << format_double(rep.measured_error) << " vs eps " << format_double(eps) << '\n';
  return rep.measured_error <= eps ? 0 : 1;
}

int cmd_swap(const GlobalOpts& g, const std::string& library_path,
             const std::string& input_path, double eps, const std::string& out_path) {
  (void)g;
  const Json lib_json = Json::parse(read_file(library_path));
  if (!lib_json.is_array() || lib_json.empty())
    throw std::invalid_argument("swap: library must be a non-empty JSON array");
  std::vector<AlgorithmSpec> library;
  for (const Json& j : lib_json) library.push_back(algorithm_spec_from_json(j.dump()));
  const Matrix X = load_csv(input_path);

  const FrozenEmulator em = build_for_library(library, X, eps);
  const std::uint64_t sum_before = emulator_checksum(em);
  const std::vector<EmulationReport> reports = swap_algorithm(em, library, X);
  const bool frozen_ok = emulator_checksum(em) == sum_before;

  Json out = Json::array();
  bool pass = frozen_ok;
  for (const EmulationReport& r : reports) {
    out.push_back(Json::parse(report_to_json(r, em.plan)));
    std::cout << r.algorithm << ": measured " << format_double(r.measured_error) << " (budget "
              << format_double(r.theoretical_budget) << ")\n";
    if (r.measured_error > eps) pass = false;
  }
  std::cout << "checksum " << (frozen_ok ? "unchanged" : "CHANGED") << '\n';
  if (!out_path.empty()) write_file(out_path, out.dump(2) + "\n");
  return pass ? 0 : 1;
}

int cmd_gd(const GlobalOpts& g, int steps, const std::string& x_path, const std::string& y_path,
           const std::string& w0_path, double eps) {
  const Matrix X = load_csv(x_path), y = load_csv(y_path);
  Matrix w0 = Matrix::Zero(X.rows(), 1);
  if (!w0_path.empty()) w0 = load_csv(w0_path);
  const double eta = 0.9 / std::max(smoothness_Lf(X), 1e-12);
  const ScalarFn loss = named_scalar("square_loss"), grad = named_scalar("square_grad");
  const GDTrace oracle = gd_multi(X, y, w0, eta, loss, grad, steps);
  const GDTrace emulated = gd_multi_emulated(X, y, w0, eta, loss, grad, steps, eps);

  Matrix iter(Eigen::Index(steps) + 1, X.rows() + 2);
  double worst = 0.0;
  for (int t = 0; t <= steps; ++t) {
    iter(t, 0) = double(t);
    for (Eigen::Index r = 0; r < X.rows(); ++r) iter(t, r + 1) = emulated.iterates[size_t(t)](r, 0);
    iter(t, X.rows() + 1) = emulated.loss_values[size_t(t)];
    worst = std::max(worst, sup_norm_diff(emulated.iterates[size_t(t)],
                                          oracle.iterates[size_t(t)]));
  }
  if (!g.out_dir.empty()) {
    std::filesystem::create_directories(g.out_dir);
    save_csv(iter, g.out_dir + "/gd_trace.csv");
  }
  const double budget = double(steps) * eps;
  std::cout << "steps " << steps << ", eta " << format_double(eta) << ", certified "
            << (emulated.certified ? "yes" : "no") << '\n';
  std::cout << "max deviation from oracle " << format_double(worst) << " (budget "
            << format_double(budget) << ")\n";
  return worst <= budget ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frozen-weight attention emulation toolkit"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--seed", g.seed, "override the seed list with a single seed")
      ->each([&g](const std::string&) { g.seed_set = true; });
  app.add_option("--config", g.config_path, "experiment config JSON");
  app.add_option("--out", g.out_dir, "output directory");

  // emulate
  auto* emulate = app.add_subcommand("emulate", "build a frozen emulator for one target");
  std::string construction = "thm32", target_path, input_path, report_path;
  double eps = 0.05;
  emulate->add_option("--construction", construction, "thm32 or thm33")
      ->check(CLI::IsMember({"thm32", "thm33"}));
  emulate->add_option("--target", target_path, "algorithm spec JSON")->required();
  emulate->add_option("--input", input_path, "input matrix CSV")->required();
  emulate->add_option("--eps", eps, "target sup-norm tolerance");
  emulate->add_option("--report", report_path, "report JSON path");

  // swap
  auto* swap = app.add_subcommand("swap", "evaluate a library with one frozen emulator");
  std::string library_path, swap_input, swap_report;
  double swap_eps = 0.05;
  swap->add_option("--library", library_path, "JSON array of algorithm specs")->required();
  swap->add_option("--input", swap_input, "input matrix CSV")->required();
  swap->add_option("--eps", swap_eps, "per-member tolerance");
  swap->add_option("--report", swap_report, "report JSON path");

  auto* sweep = app.add_subcommand("construct-sweep", "1/H head-budget sweep");
  auto* lemmas = app.add_subcommand("verify-lemmas", "batch lemma property runs");

  // train <which>
  auto* train_cmd = app.add_subcommand("train", "desk-scale trained experiments");
  std::string which;
  train_cmd->add_option("which", which, "sim-f | heads | frozen")
      ->required()
      ->check(CLI::IsMember({"sim-f", "heads", "frozen"}));

  // ames
  auto* ames = app.add_subcommand("ames", "Ames housing frozen-vs-baseline");
  std::string data_path;
  ames->add_option("--data", data_path, "Ames CSV path")->required();

  // gd
  auto* gd = app.add_subcommand("gd", "emulated gradient descent vs the oracle");
  int steps = 1;
  std::string gd_x, gd_y, gd_w0;
  double gd_eps = 0.01;
  gd->add_option("--steps", steps, "iteration count")->required()->check(CLI::NonNegativeNumber);
  gd->add_option("--X", gd_x, "design matrix CSV (d x n)")->required();
  gd->add_option("--y", gd_y, "responses CSV (1 x n)")->required();
  gd->add_option("--w0", gd_w0, "initial iterate CSV (d x 1)");
  gd->add_option("--eps", gd_eps, "per-step emulation tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (emulate->parsed())
      return cmd_emulate(g, construction, target_path, input_path, eps, report_path);
    if (swap->parsed()) return cmd_swap(g, library_path, swap_input, swap_eps, swap_report);
    if (gd->parsed()) return cmd_gd(g, steps, gd_x, gd_y, gd_w0, gd_eps);

    if (sweep->parsed()) {
      ExperimentConfig cfg = load_config(g, "construct_sweep", ExperimentConfig{});
      ResultRecord rec = run_construct_sweep(cfg);
      if (!cfg.out_dir.empty()) write_result(rec, cfg.out_dir);
      std::cout << result_to_json(rec).dump(2) << '\n';
      return rec.passed ? 0 : 1;
    }
    if (lemmas->parsed()) {
      ExperimentConfig cfg = load_config(g, "verify_lemmas", ExperimentConfig{});
      ResultRecord rec = verify_lemmas(cfg);
      if (!cfg.out_dir.empty()) write_result(rec, cfg.out_dir);
      std::cout << result_to_json(rec).dump(2) << '\n';
      return rec.passed ? 0 : 1;
    }
    if (train_cmd->parsed() || ames->parsed()) {
      ExperimentConfig defaults;
      std::string experiment;
      if (ames->parsed()) {
        experiment = "ames";
        defaults.d = 8;
        defaults.n = 4;
        defaults.hidden = 32;
        defaults.heads = 8;
        defaults.lr = 0.002;
        defaults.train_count = 500;
        defaults.test_count = 125;
        defaults.epochs = 30;
        defaults.seeds = {0, 1, 2};
      } else if (which == "sim-f") {
        experiment = "sim_f";
      } else if (which == "heads") {
        experiment = "sim_attention_heads";
        defaults.d = 2;
        defaults.d_h = 1;
        defaults.n = 4;
        defaults.hidden = 32;
        defaults.lr = 0.002;
        defaults.train_count = 1500;
        defaults.test_count = 375;
        defaults.epochs = 60;
      } else {  // frozen
        experiment = "frozen_vs_baseline";
        defaults.d = 2;
        defaults.n = 4;
        defaults.hidden = 32;
        defaults.heads = 8;
        defaults.lr = 0.002;
        defaults.train_count = 500;
        defaults.test_count = 125;
        defaults.epochs = 30;
        defaults.seeds = {0, 1, 2};
      }
      ExperimentConfig cfg = load_config(g, experiment, defaults);
      if (ames->parsed()) cfg.data_path = data_path;
      ResultRecord rec = run_trained_experiments(cfg);
      if (!cfg.out_dir.empty()) write_result(rec, cfg.out_dir);
      std::cout << result_to_json(rec).dump(2) << '\n';
      if (rec.skipped) {
        std::cerr << "notice: " << rec.notice << '\n';
        return 0;
      }
      return rec.passed ? 0 : 1;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
