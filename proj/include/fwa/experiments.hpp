#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fwa/algorithms.hpp"
#include "fwa/serialize.hpp"
#include "fwa/trainer.hpp"

// Experiment harness: data generation, the Ames ingestion pipeline, the
// constructive sweeps, and the trained desk-scale studies. Every record
// echoes its config and seeds and recomputes summary statistics from the
// stored raw values.
namespace fwa {

inline constexpr const char* kLibraryVersion = "0.1.0";

struct ExperimentConfig {
  std::string experiment = "sim_f";  // sim_f | sim_attention_heads | frozen_vs_baseline |
                                     // ames | verify_lemmas | construct_sweep
  int n = 8, d = 8, hidden = 16, heads = 1, d_h = 4;
  int train_count = 5000, test_count = 1000;
  int epochs = 50;
  int slots = 96;       // sim-f slot count
  double slot_range = 6.0;
  double lr = 0.001;
  int batch = 32;
  double eps = 0.05;
  double sigma = 0.1;
  std::vector<int> head_sweep = {1, 2, 4, 6, 8, 12};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string data_path;  // ames csv
  std::string out_dir;
};

Json config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const Json& j);

struct ResultRecord {
  std::string experiment;
  Json config;   // full echo
  Json metrics;  // raw per-seed values plus recomputed mean/std
  double runtime_seconds = 0.0;
  std::string prng = Rng::identity();
  std::string version = kLibraryVersion;
  bool passed = true;
  bool skipped = false;
  std::string notice;
};

Json result_to_json(const ResultRecord& r);

// Writes <experiment>.json (atomic rename) and, when metrics carries a
// "series" array, <experiment>_series.csv with x,y,yerr columns.
void write_result(const ResultRecord& r, const std::string& out_dir);

// Sample standard deviation (zero for a single value).
std::pair<double, double> mean_std(const std::vector<double>& v);

// One sample stacks [x; w; y] per token (x entries 10 N(0,1) - 5; w, y
// standard normal); the label is tanh(w^T x - y) x.
Dataset gen_sim_f_data(int n, int d, int count, std::uint64_t seed);

struct TaskSample {
  Matrix X;  // d x n tokens, entries 2 N(0,1) - 1
  Matrix w;  // d x 1 task weights
  Matrix Y;  // 1 x n observed responses w^T X + sigma * noise
};

// task "linear": w standard normal; "lasso": entries zeroed with probability p;
// "ridge": w = (X X^T + 5 I)^{-1} X Y^T refit from the noisy responses.
std::vector<TaskSample> gen_task_data(const std::string& task, int n, int d, int count,
                                      double p, double sigma, std::uint64_t seed);

// Model IO for emulation training: input [X; w 1^T], target w^T X (the
// algorithm output, noiseless).
Dataset task_dataset(const std::vector<TaskSample>& samples);

struct AmesData {
  Matrix X_train, y_train, X_test, y_test;  // features x rows, log target
  int rows = 0, features = 0;
  std::vector<std::string> warnings;
};

// log target, one-hot categoricals, median imputation, standardized numerics,
// seeded 80/20 split. Column-count drift from 262 is a warning, not an error.
AmesData ingest_ames(const std::string& csv_path, std::uint64_t seed = 0);

ResultRecord run_construct_sweep(const ExperimentConfig& cfg);
ResultRecord verify_lemmas(const ExperimentConfig& cfg);

// Dispatches on cfg.experiment: sim_f, sim_attention_heads, frozen_vs_baseline, ames.
ResultRecord run_trained_experiments(const ExperimentConfig& cfg);

}  // namespace fwa
