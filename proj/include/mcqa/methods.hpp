#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcqa/blackbox.hpp"
#include "mcqa/whitebox.hpp"

namespace mcqa {

// The twelve confidence measures, black-box first.
enum class Method { deg_j, deg_e, deg_c, ecc_j, ecc_e, ecc_c, sl, perplexity, token_sar, csl, csl_next, p_true };

inline constexpr std::array<Method, 12> kAllMethods{Method::deg_j, Method::deg_e,      Method::deg_c,     Method::ecc_j,
                                                    Method::ecc_e, Method::ecc_c,      Method::sl,        Method::perplexity,
                                                    Method::token_sar, Method::csl, Method::csl_next, Method::p_true};

// Config identifier, e.g. "deg_j".
std::string_view method_id(Method m);
// Table label, e.g. "Deg(J)".
std::string_view method_label(Method m);
Method method_from_string(std::string_view name);  // accepts id or label

bool is_blackbox(Method m);
BlackboxMethod to_blackbox(Method m);
WhiteboxMethod to_whitebox(Method m);

}  // namespace mcqa
