#include "dpfb/accountant.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "dpfb/error.hpp"

namespace dpfb::accountant {

namespace {

constexpr int kMinOrder = 2;
constexpr int kMaxOrder = 256;
// Ladder cap for the over-noised regime where the 2..256 grid saturates.
constexpr int kExtensionCap = 1 << 22;
constexpr double kMinSigma = 1e-3;          // series bound unreliable below
constexpr double kCalibrationSigmaLo = 0.05;
constexpr double kCalibrationSigmaHi = 1e4;
constexpr double kCalibrationRelTol = 1e-3;

// log Gamma(n) for integer n in [1, kMaxOrder + 2], tabulated once.
// The series needs log C(alpha, k) for alpha up to 256; table lookups keep
// epsilon_for cheap enough for bisection loops.
const std::array<double, kMaxOrder + 3>& lgamma_table() {
  static const std::array<double, kMaxOrder + 3> table = [] {
    std::array<double, kMaxOrder + 3> t{};
    for (int n = 1; n < static_cast<int>(t.size()); ++n) {
      t[n] = std::lgamma(static_cast<double>(n));
    }
    return t;
  }();
  return table;
}

double log_choose(int n, int k) {
  const auto& lg = lgamma_table();
  if (n + 1 < static_cast<int>(lg.size())) {
    return lg[n + 1] - lg[k + 1] - lg[n - k + 1];
  }
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

void PrivacyParams::validate() const {
  if (!(noise_multiplier > 0.0) || !std::isfinite(noise_multiplier)) {
    throw ParameterError("noise_multiplier must be positive and finite");
  }
  if (noise_multiplier < kMinSigma) {
    throw ParameterError("noise_multiplier below 1e-3: accountant bound unreliable");
  }
  if (!(sampling_prob > 0.0 && sampling_prob <= 1.0)) {
    throw ParameterError("sampling_prob must lie in (0, 1]");
  }
  if (steps < 1) {
    throw ParameterError("steps must be >= 1");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ParameterError("delta must lie in (0, 1)");
  }
}

void RdpCurve::validate() const {
  if (orders.empty()) {
    throw ParameterError("RDP curve has no orders");
  }
  if (orders.size() != values.size()) {
    throw ParameterError("RDP curve orders/values length mismatch");
  }
  for (std::size_t i = 0; i < orders.size(); ++i) {
    if (orders[i] < kMinOrder) {
      throw ParameterError("RDP orders must be >= 2");
    }
    if (i > 0 && orders[i] <= orders[i - 1]) {
      throw ParameterError("RDP orders must be strictly ascending");
    }
    if (!(values[i] >= 0.0)) {
      throw ParameterError("RDP values must be non-negative");
    }
  }
}

std::string to_string(EpsilonRange range) {
  switch (range) {
    case EpsilonRange::kStrict:
      return "strict";
    case EpsilonRange::kMedium:
      return "medium";
    case EpsilonRange::kLoose:
      return "loose";
    case EpsilonRange::kOver:
      return "over";
    case EpsilonRange::kNonPrivate:
      return "non_private";
  }
  return "unknown";
}

std::vector<int> default_orders() {
  std::vector<int> orders(kMaxOrder - kMinOrder + 1);
  for (int i = 0; i < static_cast<int>(orders.size()); ++i) {
    orders[i] = kMinOrder + i;
  }
  return orders;
}

double gaussian_rdp(double sigma, int alpha) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("sigma must be positive and finite");
  }
  if (alpha < kMinOrder) {
    throw ParameterError("alpha must be >= 2");
  }
  return 0.5 * static_cast<double>(alpha) / (sigma * sigma);
}

double subsampled_gaussian_rdp(double q, double sigma, int alpha) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("sigma must be positive and finite");
  }
  if (sigma < kMinSigma) {
    throw ParameterError("sigma below 1e-3: accountant bound unreliable");
  }
  if (alpha < kMinOrder) {
    throw ParameterError("alpha must be >= 2");
  }
  if (!(q >= 0.0 && q <= 1.0)) {
    throw ParameterError("q must lie in [0, 1]");
  }
  if (q == 0.0) {
    return 0.0;  // degenerate: nothing is ever sampled
  }

  // log of each binomial series term; evaluated fully in log space so the
  // exp(k(k-1)/(2 sigma^2)) factor can never overflow.
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
  const double log_q = std::log(q);
  const double log_1mq = (q < 1.0) ? std::log1p(-q)
                                   : -std::numeric_limits<double>::infinity();

  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(static_cast<std::size_t>(alpha) + 1);
  for (int k = 0; k <= alpha; ++k) {
    double t = log_choose(alpha, k) +
               static_cast<double>(k) * (k - 1) * inv_two_sigma_sq;
    if (k > 0) t += k * log_q;
    if (k < alpha) t += (alpha - k) * log_1mq;  // -inf terms drop out below
    terms[static_cast<std::size_t>(k)] = t;
    max_term = std::max(max_term, t);
  }

  double sum = 0.0;
  for (double t : terms) {
    sum += std::exp(t - max_term);
  }
  const double log_moment = max_term + std::log(sum);
  const double rdp = log_moment / static_cast<double>(alpha - 1);
  if (!std::isfinite(rdp)) {
    std::ostringstream msg;
    msg << "subsampled Gaussian RDP not finite at q=" << q << " sigma=" << sigma
        << " alpha=" << alpha;
    throw NumericError(msg.str());
  }
  // The mechanism's divergence is non-negative; tiny negative values can
  // only come from rounding, clamp them.
  return std::max(rdp, 0.0);
}

RdpCurve subsampled_gaussian_curve(double q, double sigma,
                                   std::span<const int> orders) {
  RdpCurve curve;
  curve.orders.assign(orders.begin(), orders.end());
  curve.values.reserve(orders.size());
  for (int alpha : orders) {
    curve.values.push_back(subsampled_gaussian_rdp(q, sigma, alpha));
  }
  curve.validate();
  return curve;
}

RdpCurve compose(const RdpCurve& curve, std::int64_t steps) {
  curve.validate();
  if (steps < 1) {
    throw ParameterError("steps must be >= 1");
  }
  RdpCurve out = curve;
  for (double& v : out.values) {
    v *= static_cast<double>(steps);
  }
  return out;
}

PrivacySpend rdp_to_eps(const RdpCurve& curve, double delta) {
  curve.validate();
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ParameterError("delta must lie in (0, 1)");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  PrivacySpend spend;
  spend.delta = delta;
  spend.epsilon = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    const double eps =
        curve.values[i] + log_inv_delta / static_cast<double>(curve.orders[i] - 1);
    if (eps < spend.epsilon) {  // strict: ties keep the smaller order
      spend.epsilon = eps;
      spend.optimal_order = curve.orders[i];
      spend.at_grid_edge = (i == 0 || i + 1 == curve.orders.size());
    }
  }
  if (!std::isfinite(spend.epsilon)) {
    throw NumericError("rdp_to_eps produced a non-finite epsilon");
  }
  return spend;
}

PrivacySpend epsilon_for(const PrivacyParams& params) {
  params.validate();
  const std::vector<int> orders = default_orders();
  const RdpCurve curve = subsampled_gaussian_curve(
      params.sampling_prob, params.noise_multiplier, orders);
  PrivacySpend spend = rdp_to_eps(compose(curve, params.steps), params.delta);

  // Over-noised inputs push the conversion minimum onto the top of the
  // 2..256 grid, where log(1/delta)/(alpha-1) still dominates. Walk a fixed
  // geometric order ladder until the objective stops improving so the
  // reported epsilon reflects vanishing privacy loss instead of the grid
  // floor. The ladder is input-independent, which keeps epsilon_for strictly
  // monotone in sigma.
  if (spend.optimal_order == kMaxOrder) {
    const double log_inv_delta = std::log(1.0 / params.delta);
    bool capped = true;
    for (int order = 2 * kMaxOrder; order <= kExtensionCap; order *= 2) {
      const double eps =
          static_cast<double>(params.steps) *
              subsampled_gaussian_rdp(params.sampling_prob,
                                      params.noise_multiplier, order) +
          log_inv_delta / static_cast<double>(order - 1);
      if (eps >= spend.epsilon) {
        capped = false;  // objective turned; the optimum is interior
        break;
      }
      spend.epsilon = eps;
      spend.optimal_order = order;
    }
    spend.at_grid_edge = capped;
  }
  return spend;
}

double calibrate_sigma(double target_eps, double q, std::int64_t steps,
                       double delta) {
  if (!(target_eps > 0.0) || !std::isfinite(target_eps)) {
    throw ParameterError("target epsilon must be positive and finite");
  }
  auto eps_at = [&](double sigma) {
    PrivacyParams p{sigma, q, steps, delta};
    return epsilon_for(p).epsilon;
  };

  double lo = kCalibrationSigmaLo;   // eps(lo) is the loosest achievable
  double hi = kCalibrationSigmaHi;   // eps(hi) is the strictest achievable
  const double eps_at_lo = eps_at(lo);
  double eps_hi = eps_at(hi);
  if (target_eps > eps_at_lo || target_eps < eps_hi) {
    std::ostringstream msg;
    msg << "target epsilon " << target_eps << " outside achievable range: "
        << "sigma=" << lo << " gives eps=" << eps_at_lo << ", sigma=" << hi
        << " gives eps=" << eps_hi;
    throw CalibrationError(msg.str());
  }
  if (eps_at_lo <= target_eps) {
    return lo;  // even the bracket floor is at least as private as asked
  }

  // Invariant: eps(lo) > target >= eps(hi). Return the hi side so the
  // achieved epsilon always errs toward more privacy. Epsilon is strictly
  // decreasing in sigma, so tightening the bracket drives both the sigma
  // width and the epsilon shortfall to zero.
  for (int iter = 0; iter < 200; ++iter) {
    const bool sigma_tight = (hi - lo) <= 0.5 * kCalibrationRelTol * lo;
    const bool eps_tight = (target_eps - eps_hi) <= kCalibrationRelTol * target_eps;
    if (sigma_tight && eps_tight) {
      return hi;
    }
    const double mid = 0.5 * (lo + hi);
    const double eps_mid = eps_at(mid);
    if (eps_mid > target_eps) {
      lo = mid;
    } else {
      hi = mid;
      eps_hi = eps_mid;
    }
  }
  throw NumericError("sigma calibration failed to converge");
}

RangeClassification classify_epsilon_range(double eps) {
  if (std::isnan(eps) || eps <= 0.0) {
    throw ParameterError("epsilon must be positive");
  }
  RangeClassification c;
  if (std::isinf(eps)) {
    c.range = EpsilonRange::kNonPrivate;
    return c;
  }
  if (eps <= 1.0) {
    c.range = EpsilonRange::kStrict;
    c.on_boundary = (eps == 1.0);
  } else if (eps <= 3.0) {
    c.range = EpsilonRange::kMedium;
    c.on_boundary = (eps == 3.0);
  } else if (eps <= 10.0) {
    c.range = EpsilonRange::kLoose;
    c.on_boundary = (eps == 10.0);
  } else {
    c.range = EpsilonRange::kOver;
  }
  return c;
}

}  // namespace dpfb::accountant
