#include "mcqa/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mcqa/error.hpp"
#include "mcqa/rng.hpp"
#include "mcqa/text.hpp"

namespace mcqa {

using nlohmann::json;

namespace {

constexpr std::array<DatasetInfo, 5> kKnownDatasets{{
    {"cqa", 5, 1221},
    {"qasc", 8, 926},
    {"medqa", 5, 1000},
    {"race-m", 4, 1000},
    {"race-h", 4, 1000},
}};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string field_string(const json& rec, const char* key) {
  const auto it = rec.find(key);
  if (it == rec.end()) throw invalid_input(std::string("missing field \"") + key + "\"");
  if (!it->is_string()) throw invalid_input(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

McqItem item_from_json(const json& rec, std::string_view schema) {
  if (!rec.is_object()) throw invalid_input("record is not an object");
  McqItem item;
  item.id = field_string(rec, "id");
  if (rec.contains("dataset")) {
    item.dataset = field_string(rec, "dataset");
  } else {
    item.dataset = std::string(schema);
  }
  if (!schema.empty() && item.dataset != schema)
    throw invalid_input("record belongs to dataset \"" + item.dataset + "\", expected \"" + std::string(schema) + "\"");
  if (const auto ctx = rec.find("context"); ctx != rec.end() && !ctx->is_null()) {
    if (!ctx->is_string()) throw invalid_input("field \"context\" must be a string or null");
    if (!ctx->get_ref<const std::string&>().empty()) item.context = ctx->get<std::string>();
  }
  item.question = field_string(rec, "question");
  const auto opts = rec.find("options");
  if (opts == rec.end() || !opts->is_array()) throw invalid_input("field \"options\" must be an array");
  for (const auto& o : *opts) {
    if (!o.is_string()) throw invalid_input("options must be strings");
    item.options.push_back(o.get<std::string>());
  }
  const auto idx = rec.find("correct_index");
  if (idx == rec.end() || !idx->is_number_integer()) throw invalid_input("field \"correct_index\" must be an integer");
  const auto raw = idx->get<long long>();
  if (raw < 0 || static_cast<std::size_t>(raw) >= item.options.size())
    throw invalid_input("correct_index " + std::to_string(raw) + " index out of range for " +
                        std::to_string(item.options.size()) + " options");
  item.correct_index = static_cast<std::size_t>(raw);
  return item;
}

json item_to_json(const McqItem& item) {
  return json{{"id", item.id},
              {"dataset", item.dataset},
              {"context", item.context ? json(*item.context) : json(nullptr)},
              {"question", item.question},
              {"options", item.options},
              {"correct_index", item.correct_index}};
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::size_t count_of(std::string_view s, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace

std::span<const DatasetInfo> known_datasets() { return kKnownDatasets; }

std::optional<DatasetInfo> find_dataset_info(std::string_view name) {
  for (const auto& info : kKnownDatasets)
    if (info.name == name) return info;
  return std::nullopt;
}

void validate_item(const McqItem& item) {
  if (item.id.empty()) throw invalid_input("empty id");
  const auto k = item.options.size();
  if (k < 2) throw invalid_input("item " + item.id + ": K = " + std::to_string(k) + " < 2 options");
  if (k > kMaxOptions) throw invalid_input("item " + item.id + ": more than 26 options");
  if (item.correct_index >= k) throw invalid_input("item " + item.id + ": correct_index index out of range");
  std::set<std::string> seen;
  for (const auto& o : item.options) {
    auto norm = normalize_whitespace(o);
    if (norm.empty()) throw invalid_input("item " + item.id + ": empty option");
    if (!seen.insert(std::move(norm)).second) throw invalid_input("item " + item.id + ": duplicate option \"" + o + "\"");
  }
  if (auto info = find_dataset_info(item.dataset); info && info->options != k)
    throw invalid_input("item " + item.id + ": dataset " + item.dataset + " has " + std::to_string(info->options) +
                        " options per question, record has " + std::to_string(k));
}

std::vector<McqItem> parse_dataset(std::string_view text, std::string_view schema, std::string_view source) {
  std::vector<McqItem> items;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    const auto where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    try {
      auto item = item_from_json(json::parse(line), schema);
      validate_item(item);
      if (!ids.insert(item.id).second) throw invalid_input("duplicate id \"" + item.id + "\"");
      items.push_back(std::move(item));
    } catch (const json::exception& e) {
      throw invalid_input(where + "malformed record: " + e.what());
    } catch (const Error& e) {
      throw invalid_input(where + e.what());
    }
  }
  return items;
}

std::vector<McqItem> load_dataset(const std::filesystem::path& path, std::string_view schema) {
  return parse_dataset(read_file(path), schema, path.string());
}

std::string serialize_dataset(std::span<const McqItem> items) {
  std::string out;
  for (const auto& item : items) {
    out += item_to_json(item).dump();
    out += '\n';
  }
  return out;
}

void write_dataset(std::span<const McqItem> items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw invalid_input("cannot write " + path.string());
  out << serialize_dataset(items);
}

std::vector<McqItem> subsample(std::span<const McqItem> items, std::size_t n, std::uint64_t seed) {
  if (n > items.size())
    throw invalid_input("subsample: n = " + std::to_string(n) + " exceeds " + std::to_string(items.size()) + " items");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(seed);
  shuffle(std::span(order), rng);
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<McqItem> out;
  out.reserve(n);
  for (auto i : order) out.push_back(items[i]);
  return out;
}

PromptTemplate::PromptTemplate(std::string name, std::string text) : name_(std::move(name)), text_(std::move(text)) {
  if (count_of(text_, "{{option}}") != 1) throw invalid_input("template " + name_ + ": needs exactly one {{option}}");
  if (count_of(text_, "{{question}}") != 1) throw invalid_input("template " + name_ + ": needs exactly one {{question}}");
  if (count_of(text_, "{{context}}") > 1) throw invalid_input("template " + name_ + ": {{context}} appears twice");
  const auto option_pos = text_.find("{{option}}");
  for (const char* slot : {"{{question}}", "{{context}}"}) {
    const auto pos = text_.find(slot);
    if (pos != std::string::npos && pos > option_pos)
      throw invalid_input("template " + name_ + ": " + slot + " must precede {{option}}");
  }
  // Anything else in double braces would be left unresolved.
  std::string probe = text_;
  for (const char* slot : {"{{question}}", "{{context}}", "{{option}}"}) replace_all(probe, slot, "");
  if (const auto pos = probe.find("{{"); pos != std::string::npos) {
    const auto close = probe.find("}}", pos);
    throw invalid_input("template " + name_ + ": unresolved placeholder " +
                        probe.substr(pos, close == std::string::npos ? 2 : close - pos + 2));
  }
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  return PromptTemplate(path.stem().string(), read_file(path));
}

PromptTemplate PromptTemplate::default_qa() { return builtin("default"); }

PromptTemplate PromptTemplate::builtin(std::string_view name) {
  if (name == "default" || name == "qa") {
    return PromptTemplate("default",
                          "Answer the following question in a few words.\n"
                          "Passage: {{context}}\n"
                          "Question: {{question}}\n"
                          "Answer: {{option}}");
  }
  throw config_error("unknown builtin template \"" + std::string(name) + "\"");
}

std::pair<std::string, std::string> PromptTemplate::expand(const McqItem& item) const {
  std::string text = text_;
  if (!item.context) {
    const auto pos = text.find("{{context}}");
    if (pos != std::string::npos) {
      const auto line_start = text.rfind('\n', pos);
      const auto begin = line_start == std::string::npos ? 0 : line_start + 1;
      auto end = text.find('\n', pos);
      end = end == std::string::npos ? text.size() : end + 1;
      text.erase(begin, end - begin);
    }
  }
  const auto option_pos = text.find("{{option}}");
  std::string before = text.substr(0, option_pos);
  std::string after = text.substr(option_pos + std::string_view("{{option}}").size());
  // Substitute question last so context text cannot inject a placeholder.
  const auto qpos = before.find("{{question}}");
  const auto cpos = before.find("{{context}}");
  if (cpos != std::string::npos && item.context) {
    if (cpos < qpos) {
      before.replace(qpos, 12, item.question);
      before.replace(cpos, 11, *item.context);
    } else {
      before.replace(cpos, 11, *item.context);
      before.replace(qpos, 12, item.question);
    }
  } else {
    before.replace(qpos, 12, item.question);
  }
  return {std::move(before), std::move(after)};
}

RenderedItem render(const McqItem& item, const PromptTemplate& tmpl) {
  auto [prompt, post] = tmpl.expand(item);
  return RenderedItem{item.id, std::move(prompt), item.options, std::move(post)};
}

}  // namespace mcqa
