#include "vitcap/linear_oracle.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "vitcap/rng.hpp"
#include "vitcap/table.hpp"

namespace vitcap {

void LinearExperimentConfig::validate() const {
  if (features <= 0 || outputs <= 0) throw ConfigError("linear experiment: P and M must be positive");
  if (train_samples < 1) throw ConfigError("linear experiment: K_train must be at least 1");
  if (test_samples < 1) throw ConfigError("linear experiment: K_test must be at least 1");
  if (sigma < 0.0) throw ConfigError("linear experiment: sigma must be non-negative");
  if (trials < 1) throw ConfigError("linear experiment: at least one trial");
}

namespace {

// fill order is row-major and fixed; the draw sequence per trial is
// X_train, W*, noise_train, X_test, noise_test
void fill_normal(Eigen::MatrixXd& m, DetRng& rng, double stddev = 1.0) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, stddev);
}

double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  return (pred - target).squaredNorm() / double(pred.size());
}

}  // namespace

LinearTrial run_trial(const LinearExperimentConfig& config, uint64_t trial_seed) {
  config.validate();
  DetRng rng(trial_seed);
  const auto k = Eigen::Index(config.train_samples);
  const auto p = Eigen::Index(config.features);
  const auto m = Eigen::Index(config.outputs);
  const auto kt = Eigen::Index(config.test_samples);

  Eigen::MatrixXd x(k, p), w_true(p, m), noise(k, m);
  fill_normal(x, rng);
  fill_normal(w_true, rng);
  fill_normal(noise, rng, config.sigma);
  const Eigen::MatrixXd y = x * w_true + noise;

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  const Eigen::MatrixXd w_hat = cod.solve(y);

  LinearTrial trial;
  trial.rank_deficient = cod.rank() < std::min(k, p);
  trial.train_mse = mse(x * w_hat, y);

  Eigen::MatrixXd x_test(kt, p), noise_test(kt, m);
  fill_normal(x_test, rng);
  fill_normal(noise_test, rng, config.sigma);
  trial.test_mse = mse(x_test * w_hat, x_test * w_true + noise_test);
  return trial;
}

LinearExperimentResult run_experiment(const LinearExperimentConfig& config) {
  config.validate();
  LinearExperimentResult res;
  res.config = config;
  res.trials.reserve(size_t(config.trials));
  for (long long i = 0; i < config.trials; ++i)
    res.trials.push_back(run_trial(config, seed_mix(config.seed, uint64_t(i))));

  auto aggregate = [&](auto pick, double& mean, double& stddev, double& se) {
    double sum = 0.0;
    for (const auto& t : res.trials) sum += pick(t);
    mean = sum / double(res.trials.size());
    double sq = 0.0;
    for (const auto& t : res.trials) sq += (pick(t) - mean) * (pick(t) - mean);
    stddev = res.trials.size() > 1 ? std::sqrt(sq / double(res.trials.size() - 1)) : 0.0;
    se = stddev / std::sqrt(double(res.trials.size()));
  };
  aggregate([](const LinearTrial& t) { return t.train_mse; }, res.mean_train_mse,
            res.stddev_train_mse, res.se_train_mse);
  aggregate([](const LinearTrial& t) { return t.test_mse; }, res.mean_test_mse,
            res.stddev_test_mse, res.se_test_mse);
  for (const auto& t : res.trials) res.any_rank_deficient = res.any_rank_deficient || t.rank_deficient;

  const double sigma2 = config.sigma * config.sigma;
  res.noise_floor = sigma2;
  res.predicted_train_mse =
      config.sigma == 0.0 ? 0.0 : train_mse_theory(config.q().value(), sigma2);
  return res;
}

std::vector<KSweepPoint> sweep_over_K(const LinearExperimentConfig& base,
                                      std::span<const long long> k_list) {
  if (k_list.empty()) throw ConfigError("K sweep: empty K list");
  for (size_t i = 1; i < k_list.size(); ++i)
    if (k_list[i] <= k_list[i - 1]) throw ConfigError("K sweep: K list must ascend");

  std::vector<KSweepPoint> points;
  points.reserve(k_list.size());
  for (const long long k : k_list) {
    LinearExperimentConfig cfg = base;
    cfg.train_samples = k;
    cfg.seed = seed_mix(base.seed, uint64_t(k));  // adding K points never perturbs others
    KSweepPoint pt;
    pt.train_samples = k;
    pt.q = cfg.q();
    pt.result = run_experiment(cfg);
    points.push_back(std::move(pt));
  }
  return points;
}

void write_k_sweep_table(std::ostream& out, std::span<const KSweepPoint> points) {
  out << data_header() << " pred_loss noise_floor\n";
  for (const auto& pt : points) {
    out << format_float(pt.q.value()) << ' ' << format_float(pt.result.mean_train_mse) << ' '
        << format_float(pt.result.mean_test_mse) << ' '
        << format_float(pt.result.predicted_train_mse) << ' '
        << format_float(pt.result.noise_floor) << '\n';
  }
}

}  // namespace vitcap
