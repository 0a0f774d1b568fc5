#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csteer {

using TokenId = std::int32_t;

/// A token-id run together with the text it decodes to.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::string surface;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }

  bool operator==(const TokenSequence& other) const { return ids == other.ids; }
};

}  // namespace csteer
