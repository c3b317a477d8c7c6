#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace dwsl {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum(exp(x))) with max subtraction; tolerates -inf entries.
inline double log_sum_exp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  double m = kNegInf;
  for (double v : logits) m = std::max(m, v);
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

// Soft minimum of `values` under `probs`: -alpha * log E[exp(-value/alpha)].
// Entries with zero probability are excluded, so degenerate distributions
// recover the plain minimum as alpha -> 0. Evaluated in log space.
inline double soft_min(std::span<const double> values, std::span<const double> probs,
                       double alpha) {
  if (values.size() != probs.size())
    throw std::invalid_argument("soft_min: size mismatch");
  if (!(alpha > 0.0)) throw std::invalid_argument("soft_min: alpha must be positive");
  std::vector<double> terms;
  terms.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (probs[i] > 0.0) terms.push_back(std::log(probs[i]) - values[i] / alpha);
  }
  if (terms.empty()) throw std::invalid_argument("soft_min: empty support");
  return -alpha * log_sum_exp(terms);
}

}  // namespace dwsl
