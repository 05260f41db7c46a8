#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "forelen/numerics.hpp"

namespace forelen {

// Per-token hidden states (row t = h_t) with the model's next-token entropy
// at each position, in nats.
struct HiddenSequence {
  Matrix states;  // n x d
  std::vector<double> entropies;

  std::size_t tokens() const { return states.rows; }
  std::size_t dim() const { return states.cols; }
  void validate() const;

  bool operator==(const HiddenSequence&) const = default;
};

struct ActivationRecord {
  std::string id;
  HiddenSequence prompt;
  std::optional<HiddenSequence> response;  // absent in static-only dumps
  std::uint32_t length = 0;                // ground-truth response tokens

  void validate() const;

  bool operator==(const ActivationRecord&) const = default;
};

using Dataset = std::vector<ActivationRecord>;

}  // namespace forelen
