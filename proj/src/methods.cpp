#include "mcqa/methods.hpp"

#include "mcqa/error.hpp"

namespace mcqa {

namespace {

struct Names {
  Method method;
  std::string_view id;
  std::string_view label;
};

constexpr std::array<Names, 12> kNames{{{Method::deg_j, "deg_j", "Deg(J)"},
                                        {Method::deg_e, "deg_e", "Deg(E)"},
                                        {Method::deg_c, "deg_c", "Deg(C)"},
                                        {Method::ecc_j, "ecc_j", "Ecc(J)"},
                                        {Method::ecc_e, "ecc_e", "Ecc(E)"},
                                        {Method::ecc_c, "ecc_c", "Ecc(C)"},
                                        {Method::sl, "sl", "SL"},
                                        {Method::perplexity, "perplexity", "Perplexity"},
                                        {Method::token_sar, "token_sar", "TokenSAR"},
                                        {Method::csl, "csl", "CSL"},
                                        {Method::csl_next, "csl_next", "CSL-Next"},
                                        {Method::p_true, "p_true", "P(true)"}}};

const Names& names_of(Method m) { return kNames[static_cast<std::size_t>(m)]; }

}  // namespace

std::string_view method_id(Method m) { return names_of(m).id; }

std::string_view method_label(Method m) { return names_of(m).label; }

Method method_from_string(std::string_view name) {
  for (const auto& n : kNames)
    if (n.id == name || n.label == name) return n.method;
  throw config_error("unknown method: " + std::string(name));
}

bool is_blackbox(Method m) { return static_cast<int>(m) <= static_cast<int>(Method::ecc_c); }

BlackboxMethod to_blackbox(Method m) {
  if (!is_blackbox(m)) throw invalid_input(std::string(method_id(m)) + " is not a black-box method");
  return static_cast<BlackboxMethod>(static_cast<int>(m));
}

WhiteboxMethod to_whitebox(Method m) {
  if (is_blackbox(m)) throw invalid_input(std::string(method_id(m)) + " is not a white-box method");
  return static_cast<WhiteboxMethod>(static_cast<int>(m) - static_cast<int>(Method::sl));
}

}  // namespace mcqa
