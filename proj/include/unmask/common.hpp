#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace unmask {

enum class Gender { male, female };

std::string_view to_string(Gender g);

/// Accepts "male" / "female" (case-sensitive). Anything else is nullopt.
std::optional<Gender> parse_gender(std::string_view s);

}  // namespace unmask
