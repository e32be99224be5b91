#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slab/autodiff.hpp"
#include "slab/common.hpp"

namespace slab {

/// Isotropic or diagonal Gaussian description (prior specs, flow bases).
struct GaussianSpec {
  Vec mean;
  Vec variance;  // per-dimension, all > 0

  GaussianSpec() = default;
  GaussianSpec(Vec m, Vec v) : mean(std::move(m)), variance(std::move(v)) {
    SLAB_REQUIRE(mean.size() == variance.size(), "GaussianSpec: dim mismatch");
    SLAB_REQUIRE((variance.array() > 0).all(), "GaussianSpec: variance must be positive");
  }
  static GaussianSpec isotropic(int dim, double var, double mean_val = 0.0) {
    return GaussianSpec(Vec::Constant(dim, mean_val), Vec::Constant(dim, var));
  }
  int dim() const { return static_cast<int>(mean.size()); }

  Vec log_density(const Mat& x) const;
  Mat grad_log_density(const Mat& x) const;
  ad::Value log_density_graph(const ad::Value& x) const;
  Mat sample(int n, Rng& rng) const;
};

/// Unnormalized log-density with analytic gradient and energy-call
/// accounting. All built-in targets are normalized Gaussian mixtures, so
/// exact_log_z = 0 and an exact sampler is available.
class TargetDensity {
 public:
  // Normalized mixture; weights must lie on the simplex.
  TargetDensity(Mat means, Vec variances, Vec weights);

  int dim() const { return static_cast<int>(means_.cols()); }
  int components() const { return static_cast<int>(means_.rows()); }
  const Mat& means() const { return means_; }
  const Vec& variances() const { return variances_; }
  const Vec& weights() const { return weights_; }
  std::optional<double> exact_log_z() const { return 0.0; }

  /// log p~(x) per row; one density call unit per row.
  Vec log_unnorm(const Mat& x) const;
  /// grad log p~(x) per row; one gradient call unit per row.
  Mat grad_log(const Mat& x) const;
  /// (log p~, grad log p~); two call units per row.
  std::pair<Vec, Mat> log_and_grad(const Mat& x) const;

  /// Graph of log p~ over a batch node (B x dim) -> (B x 1); one density
  /// call unit per row at build time.
  ad::Value log_unnorm_graph(const ad::Value& x) const;
  /// Gradient of log p~ as a differentiable graph (B x dim); counts one
  /// density and one gradient unit per row.
  ad::Value grad_log_graph(const ad::Value& x) const;

  bool has_exact_sampler() const { return true; }
  Mat sample_exact(int n, Rng& rng) const;

  long long eval_calls() const { return counter_->load(); }
  void reset_counter() { counter_->store(0); }
  std::shared_ptr<std::atomic<long long>> counter() const { return counter_; }

  Vec mixture_mean() const;
  Vec mixture_variance() const;  // per-dimension marginal variance

  void export_params_csv(const std::string& path) const;

 private:
  Mat means_;      // K x dim
  Vec variances_;  // K (isotropic per component)
  Vec weights_;    // K
  Vec log_weights_;
  std::shared_ptr<std::atomic<long long>> counter_;
};

using TargetPtr = std::shared_ptr<TargetDensity>;

TargetPtr make_gauss(const Vec& mean, double variance);
TargetPtr make_gmm(const std::vector<Vec>& means, const std::vector<double>& variances,
                   const Vec& weights);
/// 3 equally weighted unit-variance modes at the vertices of an equilateral
/// triangle with circumradius 5.
TargetPtr make_gmm3();
/// 40 equally weighted unit-variance modes, means uniform in [-40, 40]^2,
/// deterministic per seed.
TargetPtr make_gmm40(std::uint64_t seed);

/// (log p~, grad log p~) at a single point; bumps the counter by 2.
std::pair<double, Vec> log_density_and_grad(const TargetDensity& t, const Vec& x);

}  // namespace slab
