#include "mcqa/similarity.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mcqa/error.hpp"
#include "mcqa/text.hpp"

namespace mcqa {

using nlohmann::json;

std::string_view to_string(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::jaccard: return "jaccard";
    case SimilarityKind::nli_entailment: return "nli_entailment";
    case SimilarityKind::nli_contradiction: return "nli_contradiction";
  }
  return "?";
}

SimilarityKind similarity_kind_from_string(std::string_view name) {
  if (name == "jaccard") return SimilarityKind::jaccard;
  if (name == "nli_entailment" || name == "entailment") return SimilarityKind::nli_entailment;
  if (name == "nli_contradiction" || name == "contradiction") return SimilarityKind::nli_contradiction;
  throw invalid_input("unknown similarity kind \"" + std::string(name) + "\"");
}

double diagonal_value(SimilarityKind kind) { return kind == SimilarityKind::nli_contradiction ? 0.0 : 1.0; }

double jaccard(std::string_view a, std::string_view b) {
  const auto ta = word_tokens(a);
  const auto tb = word_tokens(b);
  const std::set<std::string> sa(ta.begin(), ta.end());
  const std::set<std::string> sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

std::vector<PairScore> JaccardProvider::score_pairs(const std::optional<std::string>&,
                                                    std::span<const TextPair> pairs) {
  std::vector<PairScore> out;
  out.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const double s = jaccard(a, b);
    out.push_back({s, s});
  }
  return out;
}

std::vector<PairScore> CountingProvider::score_pairs(const std::optional<std::string>& context,
                                                     std::span<const TextPair> pairs) {
  pairs_scored_ += pairs.size();
  return inner_.score_pairs(context, pairs);
}

SimilarityMatrix::SimilarityMatrix(SimilarityKind kind, Eigen::MatrixXd values, std::string context_sha256)
    : kind_(kind), values_(std::move(values)), context_sha256_(std::move(context_sha256)) {
  if (values_.rows() != values_.cols()) throw invalid_input("similarity matrix must be square");
}

std::string context_digest(const std::optional<std::string>& context) {
  return context ? sha256_hex(*context) : std::string();
}

namespace {

double symmetrized(const PairScore& s, const SimilarityProvider& provider) {
  auto checked = [&](double v) {
    if (!std::isfinite(v)) throw Error(ErrorKind::backend, provider.identity() + ": non-finite pair score");
    if (v < 0.0 || v > 1.0) {
      warn(provider.identity() + ": pair score " + std::to_string(v) + " outside [0,1], clamped");
      return std::clamp(v, 0.0, 1.0);
    }
    return v;
  };
  return (checked(s.ab) + checked(s.ba)) / 2.0;
}

std::vector<PairScore> score_checked(SimilarityProvider& provider, const std::optional<std::string>& context,
                                     std::span<const TextPair> pairs) {
  auto scores = provider.score_pairs(context, pairs);
  if (scores.size() != pairs.size())
    throw Error(ErrorKind::backend, provider.identity() + ": returned " + std::to_string(scores.size()) +
                                        " scores for " + std::to_string(pairs.size()) + " pairs");
  return scores;
}

}  // namespace

SimilarityMatrix build_matrix(std::span<const std::string> texts, SimilarityProvider& provider,
                              const std::optional<std::string>& context) {
  const auto n = static_cast<Eigen::Index>(texts.size());
  if (n < 1) throw invalid_input("build_matrix: need at least one text");
  std::vector<TextPair> pairs;
  pairs.reserve(texts.size() * (texts.size() - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) pairs.emplace_back(texts[i], texts[j]);
  const auto scores = score_checked(provider, context, pairs);

  Eigen::MatrixXd values(n, n);
  values.diagonal().setConstant(diagonal_value(provider.kind()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = symmetrized(scores[k++], provider);
      values(i, j) = v;
      values(j, i) = v;
    }
  }
  return SimilarityMatrix(provider.kind(), std::move(values), context_digest(context));
}

SimilarityMatrix extend_matrix(const SimilarityMatrix& base, std::span<const std::string> texts,
                               const std::string& candidate, SimilarityProvider& provider,
                               const std::optional<std::string>& context) {
  if (base.kind() != provider.kind())
    throw invalid_input("extend_matrix: matrix kind " + std::string(to_string(base.kind())) +
                        " does not match provider kind " + std::string(to_string(provider.kind())));
  if (base.context_sha256() != context_digest(context))
    throw invalid_input("extend_matrix: context differs from the one the matrix was built with");
  if (base.size() != texts.size())
    throw invalid_input("extend_matrix: matrix has " + std::to_string(base.size()) + " rows but " +
                        std::to_string(texts.size()) + " texts were given");
  const auto n = static_cast<Eigen::Index>(texts.size());
  std::vector<TextPair> pairs;
  pairs.reserve(texts.size());
  for (const auto& t : texts) pairs.emplace_back(t, candidate);
  const auto scores = score_checked(provider, context, pairs);

  Eigen::MatrixXd values(n + 1, n + 1);
  values.topLeftCorner(n, n) = base.values();
  values(n, n) = diagonal_value(base.kind());
  for (Eigen::Index j = 0; j < n; ++j) {
    const double v = symmetrized(scores[static_cast<std::size_t>(j)], provider);
    values(j, n) = v;
    values(n, j) = v;
  }
  return SimilarityMatrix(base.kind(), std::move(values), base.context_sha256());
}

SimilarityMatrix parse_precomputed(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string header_line;
  if (!std::getline(in, header_line)) throw invalid_input("matrix file: missing header");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw invalid_input(std::string("matrix file: bad header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("n") || !header.contains("kind"))
    throw invalid_input("matrix file: header needs n and kind");
  const auto n_raw = header.at("n").get<long long>();
  if (n_raw < 1) throw invalid_input("matrix file: n must be >= 1");
  const auto n = static_cast<Eigen::Index>(n_raw);
  const auto kind = similarity_kind_from_string(header.at("kind").get<std::string>());
  std::string ctx;
  if (header.contains("context_sha256") && header.at("context_sha256").is_string())
    ctx = header.at("context_sha256").get<std::string>();

  Eigen::MatrixXd values(n, n);
  std::string line;
  Eigen::Index row = 0;
  while (std::getline(in, line)) {
    if (normalize_whitespace(line).empty()) continue;
    if (row >= n) throw invalid_input("matrix file: shape mismatch, more than " + std::to_string(n) + " rows");
    std::istringstream ls(line);
    Eigen::Index col = 0;
    std::string tok;
    while (ls >> tok) {
      if (col >= n) throw invalid_input("matrix file: shape mismatch in row " + std::to_string(row));
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || !std::isfinite(v))
        throw invalid_input("matrix file: bad number \"" + tok + "\" in row " + std::to_string(row));
      values(row, col++) = v;
    }
    if (col != n) throw invalid_input("matrix file: shape mismatch in row " + std::to_string(row));
    ++row;
  }
  if (row != n) throw invalid_input("matrix file: shape mismatch, expected " + std::to_string(n) + " rows");

  const double diag = diagonal_value(kind);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = values(i, j);
      if (v < 0.0 || v > 1.0)
        throw invalid_input("matrix file: value " + std::to_string(v) + " at (" + std::to_string(i) + "," +
                            std::to_string(j) + ") out of range [0,1]");
      if (std::abs(v - values(j, i)) > 1e-9)
        throw invalid_input("matrix file: asymmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
    if (values(i, i) != diag)
      throw invalid_input("matrix file: diagonal entry " + std::to_string(i) + " violates the " +
                          std::string(to_string(kind)) + " convention");
  }
  // Within tolerance; store exactly symmetric values.
  Eigen::MatrixXd sym = (values + values.transpose()) / 2.0;
  return SimilarityMatrix(kind, std::move(sym), std::move(ctx));
}

SimilarityMatrix load_precomputed(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_precomputed(ss.str());
  } catch (const Error& e) {
    throw invalid_input(path.string() + ": " + e.what());
  }
}

std::string serialize_matrix(const SimilarityMatrix& m) {
  json header{{"n", m.size()}, {"kind", to_string(m.kind())}, {"context_sha256", m.context_sha256()}};
  std::string out = header.dump() + "\n";
  char buf[32];
  const auto n = static_cast<Eigen::Index>(m.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m.values()(i, j));
      if (j) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void save_matrix(const SimilarityMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw invalid_input("cannot write " + path.string());
  out << serialize_matrix(m);
}

PrecomputedProvider::PrecomputedProvider(std::vector<std::string> texts, SimilarityMatrix matrix, std::string identity)
    : matrix_(std::move(matrix)), identity_(std::move(identity)) {
  if (texts.size() != matrix_.size())
    throw invalid_input("precomputed provider: " + std::to_string(texts.size()) + " texts for a " +
                        std::to_string(matrix_.size()) + "-row matrix");
  for (std::size_t i = 0; i < texts.size(); ++i) index_.emplace(texts[i], i);
}

std::size_t PrecomputedProvider::index_of(const std::string& text) const {
  const auto it = index_.find(text);
  if (it == index_.end()) throw Error(ErrorKind::replay_miss, identity_ + ": no precomputed row for \"" + text + "\"");
  return it->second;
}

std::vector<PairScore> PrecomputedProvider::score_pairs(const std::optional<std::string>& context,
                                                        std::span<const TextPair> pairs) {
  if (!matrix_.context_sha256().empty() && matrix_.context_sha256() != context_digest(context))
    throw invalid_input(identity_ + ": context does not match the precomputed matrix");
  std::vector<PairScore> out;
  out.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const double v = matrix_(index_of(a), index_of(b));
    out.push_back({v, v});
  }
  return out;
}

}  // namespace mcqa
