// SPDX-License-Identifier: Apache-2.0
#include "mmsa/random.hpp"

#include <bit>
#include <sstream>

namespace mmsa {

std::string Rng::state_string() const {
  std::ostringstream os;
  os << engine_;
  if (has_spare_) os << " spare " << std::bit_cast<std::uint64_t>(spare_);
  return os.str();
}

void Rng::restore_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  std::string tag;
  has_spare_ = false;
  if (is >> tag && tag == "spare") {
    std::uint64_t bits = 0;
    is >> bits;
    spare_ = std::bit_cast<double>(bits);
    has_spare_ = true;
  }
}

}  // namespace mmsa
