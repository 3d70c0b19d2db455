#include "pathagg/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pathagg {

std::string_view to_string(DistKind kind) {
  switch (kind) {
    case DistKind::kWeighted: return "P_w";
    case DistKind::kUnweighted: return "P_s";
    case DistKind::kLm: return "P_LM";
    case DistKind::kReference: return "P*";
    case DistKind::kUniform: return "P_u";
  }
  return "?";
}

double EntityDistribution::sum() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

EntityId EntityDistribution::argmax() const { return static_cast<EntityId>(argmax_first(probs)); }

std::vector<double> stable_softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be > 0");
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end()) / temperature;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    // Floor underflowed terms: the exact softmax is strictly positive.
    out[i] = std::max(std::exp(logits[i] / temperature - peak), std::numeric_limits<double>::min());
    total += out[i];
  }
  for (auto& p : out) p /= total;
  return out;
}

std::size_t argmax_first(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace pathagg
