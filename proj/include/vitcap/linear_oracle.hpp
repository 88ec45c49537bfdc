#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "vitcap/capacity.hpp"

// Monte Carlo ground truth for the error laws on exactly solvable linear
// regression: y = X W* + noise, fitted by least squares. With M outputs the
// fitted weight matrix has P*M entries, so Q = MK/(PM) = K/P.

namespace vitcap {

struct LinearExperimentConfig {
  long long features = 20;      // P: input features per output
  long long outputs = 1;        // M
  long long train_samples = 100;   // K_train
  long long test_samples = 10000;  // K_test; large so the noise floor is tight
  double sigma = 1.0;           // noise standard deviation
  long long trials = 1;
  uint64_t seed = 0;

  void validate() const;
  long long total_params() const { return features * outputs; }
  // K_train * M < P_total, i.e. fewer constraints than parameters
  bool underdetermined() const { return train_samples * outputs < total_params(); }
  Rational q() const {
    return determination_ratio({outputs, train_samples, total_params()});
  }
};

struct LinearTrial {
  double train_mse = 0.0;
  double test_mse = 0.0;
  bool rank_deficient = false;  // minimum-norm solution was taken
};

struct LinearExperimentResult {
  LinearExperimentConfig config;
  std::vector<LinearTrial> trials;
  double mean_train_mse = 0.0, stddev_train_mse = 0.0, se_train_mse = 0.0;
  double mean_test_mse = 0.0, stddev_test_mse = 0.0, se_test_mse = 0.0;
  double predicted_train_mse = 0.0;  // sigma^2 (1 - 1/Q), 0 when Q <= 1
  double noise_floor = 0.0;          // sigma^2
  bool any_rank_deficient = false;
};

// One draw of (X, W*, noise), least-squares fit by complete orthogonal
// decomposition (rank detection at the machine-epsilon-scaled singular value
// cutoff; rank-deficient systems get the minimum-norm solution), evaluated
// on the training set and a freshly drawn test set with fresh noise.
LinearTrial run_trial(const LinearExperimentConfig& config, uint64_t trial_seed);

// `trials` independent repetitions with seeds derived as mix(seed, trial).
LinearExperimentResult run_experiment(const LinearExperimentConfig& config);

struct KSweepPoint {
  long long train_samples = 0;
  Rational q;
  LinearExperimentResult result;
};

// One experiment per K (ascending); Q recomputed per point.
std::vector<KSweepPoint> sweep_over_K(const LinearExperimentConfig& base,
                                      std::span<const long long> k_list);

// Same table format as the sweep data files plus predicted columns:
// determination loss val_loss pred_loss noise_floor
void write_k_sweep_table(std::ostream& out, std::span<const KSweepPoint> points);

}  // namespace vitcap
