#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dpfb::accountant {

// Inputs of the accountant for one training run.
struct PrivacyParams {
  double noise_multiplier = 0.0;  // sigma, noise stddev per unit sensitivity
  double sampling_prob = 1.0;     // q, Poisson inclusion probability
  std::int64_t steps = 1;         // T, composition count
  double delta = 1e-5;

  // Throws ParameterError on violated invariants.
  void validate() const;
};

// Per-order Renyi budgets over an ascending integer order grid.
struct RdpCurve {
  std::vector<int> orders;     // strictly ascending, all >= 2
  std::vector<double> values;  // nats, >= 0, same length as orders

  void validate() const;
};

// Result of converting an RDP curve to (epsilon, delta).
struct PrivacySpend {
  double epsilon = 0.0;
  double delta = 0.0;
  int optimal_order = 0;     // order attaining the conversion minimum
  bool at_grid_edge = false; // minimum landed on the first or last order
};

// The reporting ranges used for grouping achieved budgets.
enum class EpsilonRange { kStrict, kMedium, kLoose, kOver, kNonPrivate };

struct RangeClassification {
  EpsilonRange range = EpsilonRange::kNonPrivate;
  // True when eps fell exactly on a range boundary (1, 3, 10) and was
  // assigned to the lower range by convention.
  bool on_boundary = false;
};

std::string to_string(EpsilonRange range);

// Integer orders 2..256, the default grid for all conversions.
std::vector<int> default_orders();

// RDP of the Gaussian mechanism at unit sensitivity: alpha / (2 sigma^2).
double gaussian_rdp(double sigma, int alpha);

// RDP of the Poisson-subsampled Gaussian mechanism at integer order alpha,
//   (1/(alpha-1)) * log sum_{k=0}^{alpha} C(alpha,k) (1-q)^(alpha-k) q^k
//                                        * exp(k(k-1) / (2 sigma^2)),
// evaluated in log space. q = 0 is the degenerate no-sampling case and
// yields 0; q = 1 reduces to gaussian_rdp.
double subsampled_gaussian_rdp(double q, double sigma, int alpha);

// Per-order curve for one step of the subsampled Gaussian mechanism.
RdpCurve subsampled_gaussian_curve(double q, double sigma,
                                   std::span<const int> orders);

// Additive composition over `steps` identical steps.
RdpCurve compose(const RdpCurve& curve, std::int64_t steps);

// Classic conversion: eps = min_alpha [ value(alpha) + log(1/delta)/(alpha-1) ],
// ties broken toward the smallest order.
PrivacySpend rdp_to_eps(const RdpCurve& curve, double delta);

// Full pipeline over the default order grid.
PrivacySpend epsilon_for(const PrivacyParams& params);

// Smallest sigma in [0.05, 1e4] whose achieved epsilon is within
// 1e-3 relative of target_eps, never exceeding it. Throws CalibrationError
// (naming the bracket endpoints' epsilon values) when unattainable.
double calibrate_sigma(double target_eps, double q, std::int64_t steps,
                       double delta);

// Maps a positive (possibly infinite) epsilon to its reporting range.
// Boundary values 1, 3, 10 go to the lower range with on_boundary set.
RangeClassification classify_epsilon_range(double eps);

}  // namespace dpfb::accountant
