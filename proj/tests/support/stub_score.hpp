#pragma once

#include <string_view>

#include "semir/common.hpp"
#include "semir/scorers.hpp"

namespace semir_test {

/// What the stub scorer process answers for a pair.
inline double stub_score(semir::ScorerKind kind, std::string_view query, std::string_view sentence) {
    std::uint64_t h = semir::fnv1a64(query);
    h = semir::fnv1a64("\x1f", h);
    h = semir::fnv1a64(sentence, h);
    return static_cast<double>(h % 1001) / 1000.0 * semir::native_max(kind);
}

}  // namespace semir_test
