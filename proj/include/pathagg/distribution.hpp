#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "pathagg/kg.hpp"

namespace pathagg {

enum class DistKind { kWeighted, kUnweighted, kLm, kReference, kUniform };

std::string_view to_string(DistKind kind);

/// Dense probability vector over all entities.
struct EntityDistribution {
  std::vector<double> probs;
  DistKind kind = DistKind::kUniform;
  double temperature = 0.0;  // only meaningful for kWeighted / kUnweighted

  std::size_t size() const noexcept { return probs.size(); }
  double sum() const;
  /// Smallest entity id among the maxima.
  EntityId argmax() const;
};

/// Max-subtracted softmax of logits / temperature.
std::vector<double> stable_softmax(std::span<const double> logits, double temperature = 1.0);

/// Index of the first maximum.
std::size_t argmax_first(std::span<const double> values);

}  // namespace pathagg
