#include "forelen/sequence.hpp"

#include <cmath>

#include "forelen/error.hpp"

namespace forelen {

void HiddenSequence::validate() const {
  require(states.rows >= 1, ErrorKind::kDomain, "sequence has no tokens");
  require(states.cols >= 1, ErrorKind::kDomain, "sequence has zero hidden dimension");
  require(states.data.size() == states.rows * states.cols, ErrorKind::kDomain,
          "state storage has wrong size");
  require(entropies.size() == states.rows, ErrorKind::kDomain,
          "entropy count does not match token count");
  require_finite(states.data, "hidden states");
  for (double h : entropies) {
    require(std::isfinite(h) && h >= 0.0, ErrorKind::kDomain,
            "token entropies must be finite and nonnegative");
  }
}

void ActivationRecord::validate() const {
  require(length >= 1, ErrorKind::kDomain, "record " + id + " has zero length");
  prompt.validate();
  if (response) {
    response->validate();
    require(response->tokens() == length, ErrorKind::kDomain,
            "record " + id + " response token count differs from its length");
    require(response->dim() == prompt.dim(), ErrorKind::kDomain,
            "record " + id + " prompt and response dimensions differ");
  }
}

}  // namespace forelen
