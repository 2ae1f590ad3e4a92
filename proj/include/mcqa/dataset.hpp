#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mcqa {

// One multiple-choice question. Exactly one option is correct.
struct McqItem {
  std::string id;
  std::string dataset;
  std::optional<std::string> context;  // reading passage (RACE); absent otherwise
  std::string question;
  std::vector<std::string> options;
  std::size_t correct_index = 0;

  bool operator==(const McqItem&) const = default;
};

inline constexpr std::size_t kMaxOptions = 26;

// Option counts of the datasets the harness knows by name. load_dataset
// rejects records whose option count disagrees with a known schema.
struct DatasetInfo {
  std::string_view name;
  std::size_t options;
  std::size_t evaluated_size;
};
std::span<const DatasetInfo> known_datasets();
std::optional<DatasetInfo> find_dataset_info(std::string_view name);

// Throws mcqa::Error(invalid_input) naming the offending field.
void validate_item(const McqItem& item);

// Reads the normalized line-delimited ingest format:
//   {"id", "dataset", "context" (string|null), "question", "options", "correct_index"}
// An empty `schema` accepts any dataset name; otherwise every record must
// belong to it (records without a "dataset" field inherit it).
std::vector<McqItem> load_dataset(const std::filesystem::path& path, std::string_view schema = {});
std::vector<McqItem> parse_dataset(std::string_view text, std::string_view schema = {},
                                   std::string_view source = "<memory>");
void write_dataset(std::span<const McqItem> items, const std::filesystem::path& path);
std::string serialize_dataset(std::span<const McqItem> items);

// Shuffle-then-take with SplitMix64(seed); the selection is returned in its
// original (file) order.
std::vector<McqItem> subsample(std::span<const McqItem> items, std::size_t n, std::uint64_t seed);

// Template text with {{context}}, {{question}} and {{option}} placeholders.
// {{option}} marks where an answer is generated or injected; everything
// before it is the sampling prompt. A line holding {{context}} is dropped
// entirely for items without a context.
class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::string text);

  static PromptTemplate load(const std::filesystem::path& path);
  static PromptTemplate default_qa();
  static PromptTemplate builtin(std::string_view name);

  const std::string& name() const { return name_; }
  const std::string& text() const { return text_; }

  // Text preceding / following the {{option}} slot, with the other
  // placeholders substituted.
  std::pair<std::string, std::string> expand(const McqItem& item) const;

 private:
  std::string name_;
  std::string text_;
};

struct RenderedItem {
  std::string item_id;
  std::string prompt;                   // question-only prompt used for sampling
  std::vector<std::string> candidates;  // options injected as if generated, in order
  std::string postamble;                // template text after the option slot
};

RenderedItem render(const McqItem& item, const PromptTemplate& tmpl);

}  // namespace mcqa
