#pragma once

#include <string>
#include <string_view>

namespace textdemand {

/// One pass of the classic Porter (1980) suffix-stripping algorithm.
/// Input must be lowercase; words of one or two letters are returned unchanged.
std::string porter_stem(std::string_view word);

/// Applies porter_stem until the word stops changing. A single Porter pass is
/// not idempotent ("agreed" -> "agre" -> "agr"); the fixed point is.
std::string porter_stem_fixpoint(std::string_view word);

}  // namespace textdemand
