#include "cbr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cbr/encoders.hpp"
#include "cbr/errors.hpp"
#include "cbr/hashing.hpp"
#include "cbr/io.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using nlohmann::json;

Case::Case(std::string id_, std::string text_, std::optional<FallacyLabel> label_)
    : id(std::move(id_)), text(std::move(text_)), label(label_) {
  enrichments[RepresentationKind::Text] = text;
}

bool Case::has_representation(RepresentationKind kind) const {
  return kind == RepresentationKind::Text || enrichments.contains(kind);
}

void Case::set_enrichment(RepresentationKind kind, std::string value) {
  if (kind == RepresentationKind::Text) text = value;
  enrichments[kind] = std::move(value);
}

std::string represent(const Case& c, RepresentationKind kind) {
  if (kind == RepresentationKind::Text) return c.text;
  auto it = c.enrichments.find(kind);
  if (it == c.enrichments.end()) {
    throw MissingRepresentationError("case '" + c.id + "' has no " +
                                     std::string(kind_name(kind)) + " enrichment");
  }
  return c.text + " " + it->second;
}

bool is_synthetic(const Case& c) {
  static const std::regex kAugSuffix("-aug[0-9]+$");
  return std::regex_search(c.id, kAugSuffix);
}

LabelCounts count_labels(const std::vector<Case>& cases) {
  LabelCounts counts{};
  for (const auto& c : cases) {
    if (c.label) ++counts[label_index(*c.label)];
  }
  return counts;
}

DatasetFormat parse_format(std::string_view raw) {
  if (raw == "csv") return DatasetFormat::Csv;
  if (raw == "jsonl") return DatasetFormat::Jsonl;
  throw ConfigError("unknown dataset format '" + std::string(raw) + "'");
}

DatasetFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return DatasetFormat::Csv;
  if (ext == ".jsonl" || ext == ".json") return DatasetFormat::Jsonl;
  throw ConfigError("cannot infer dataset format from '" + path.string() + "'");
}

namespace {

// RFC-4180 records. Quoted fields may hold commas, doubled quotes and line
// breaks. A trailing newline does not start an empty record.
std::vector<std::vector<std::string>> parse_csv(std::string_view data) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t i = 0;
  if (data.starts_with("\xEF\xBB\xBF")) i = 3;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  for (; i < data.size(); ++i) {
    const char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') ++i;
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw RowError("unterminated quoted CSV field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string row_ref(std::string_view split, std::size_t row) {
  return std::string(split) + " row " + std::to_string(row);
}

Case make_case(std::optional<std::string> id, const std::string& text,
               const std::optional<std::string>& label, std::string_view split,
               std::size_t row, bool allow_unlabeled) {
  if (trim(text).empty()) throw RowError(row_ref(split, row) + ": empty text");
  std::optional<FallacyLabel> parsed;
  if (label && !trim(*label).empty()) {
    try {
      parsed = parse_fallacy_label(*label);
    } catch (const LabelParseError&) {
      throw LabelParseError(row_ref(split, row) + ": unknown label '" + *label + "'");
    }
  } else if (!allow_unlabeled) {
    throw RowError(row_ref(split, row) + ": missing label");
  }
  if (!id || id->empty()) id = std::string(split) + "-" + std::to_string(row);
  return Case(std::move(*id), text, parsed);
}

std::vector<Case> load_csv(std::string_view data, std::string_view split, bool allow_unlabeled) {
  auto rows = parse_csv(data);
  if (rows.empty()) throw RowError(std::string(split) + ": CSV has no header");
  const auto& header = rows.front();
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    return std::nullopt;
  };
  const auto text_col = column("text");
  const auto label_col = column("label");
  const auto id_col = column("id");
  if (!text_col || (!label_col && !allow_unlabeled)) {
    throw RowError(std::string(split) + ": CSV header must contain text,label");
  }
  std::vector<Case> cases;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t index = r - 1;
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    auto cell = [&](std::optional<std::size_t> col) -> std::optional<std::string> {
      if (!col || *col >= row.size()) return std::nullopt;
      return row[*col];
    };
    auto text = cell(text_col);
    if (!text) throw RowError(row_ref(split, index) + ": missing text column");
    cases.push_back(make_case(cell(id_col), *text, cell(label_col), split, index, allow_unlabeled));
  }
  return cases;
}

std::vector<Case> load_jsonl(std::string_view data, std::string_view split, bool allow_unlabeled) {
  std::vector<Case> cases;
  std::size_t index = 0;
  std::istringstream in{std::string(data)};
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw RowError(row_ref(split, index) + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
      throw RowError(row_ref(split, index) + ": object needs a string 'text'");
    }
    std::optional<std::string> id;
    if (obj.contains("id") && obj["id"].is_string()) id = obj["id"].get<std::string>();
    std::optional<std::string> label;
    if (obj.contains("label") && obj["label"].is_string()) label = obj["label"].get<std::string>();
    Case c = make_case(id, obj["text"].get<std::string>(), label, split, index, allow_unlabeled);
    if (obj.contains("enrichments") && obj["enrichments"].is_object()) {
      for (const auto& [key, value] : obj["enrichments"].items()) {
        const RepresentationKind kind = parse_kind(key);
        if (kind == RepresentationKind::Text) continue;
        c.set_enrichment(kind, value.get<std::string>());
      }
    }
    cases.push_back(std::move(c));
    ++index;
  }
  return cases;
}

}  // namespace

std::vector<Case> load_cases(const std::filesystem::path& path, DatasetFormat format,
                             std::string_view split, bool allow_unlabeled) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const std::string data = read_file(path);
  return format == DatasetFormat::Csv ? load_csv(data, split, allow_unlabeled)
                                      : load_jsonl(data, split, allow_unlabeled);
}

LabeledCorpus load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  LabeledCorpus corpus;
  if (std::filesystem::is_directory(path)) {
    const std::string ext = format == DatasetFormat::Csv ? ".csv" : ".jsonl";
    corpus.train = load_cases(path / ("train" + ext), format, "train");
    const auto test_path = path / ("test" + ext);
    if (std::filesystem::exists(test_path)) corpus.test = load_cases(test_path, format, "test");
  } else {
    corpus.train = load_cases(path, format, "train");
  }
  std::unordered_set<std::string> train_ids;
  for (const auto& c : corpus.train) train_ids.insert(c.id);
  for (const auto& c : corpus.test) {
    if (train_ids.contains(c.id)) throw RowError("id '" + c.id + "' appears in both train and test");
  }
  return corpus;
}

std::string to_jsonl(const std::vector<Case>& cases) {
  std::string out;
  for (const auto& c : cases) {
    json obj;
    obj["id"] = c.id;
    obj["text"] = c.text;
    if (c.label) obj["label"] = std::string(label_name(*c.label));
    json enr = json::object();
    for (const auto& [kind, value] : c.enrichments) {
      if (kind != RepresentationKind::Text) enr[std::string(kind_name(kind))] = value;
    }
    if (!enr.empty()) obj["enrichments"] = std::move(enr);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::vector<Case>& cases, const std::filesystem::path& path) {
  atomic_write(path, to_jsonl(cases));
}

SynonymLexicon load_lexicon(const std::filesystem::path& path) {
  SynonymLexicon lexicon;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw RowError("lexicon row " + std::to_string(row) + ": " + e.what());
    }
    std::string token = obj.at("token").get<std::string>();
    std::transform(token.begin(), token.end(), token.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    auto& subs = lexicon[token];
    for (const auto& s : obj.at("substitutes")) subs.push_back(s.get<std::string>());
    ++row;
  }
  return lexicon;
}

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return out;
}

template <typename Fn>
void for_each_word(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
    fn(i, j);
    i = j;
  }
}

std::string substitute_words(std::string_view text,
                             const std::map<std::string, std::string>& replacements) {
  std::string out;
  std::size_t last = 0;
  for_each_word(text, [&](std::size_t b, std::size_t e) {
    const std::string word = lower(text.substr(b, e - b));
    auto it = replacements.find(word);
    if (it == replacements.end()) return;
    out.append(text.substr(last, b - last));
    std::string sub = it->second;
    if (!sub.empty() && std::isupper(static_cast<unsigned char>(text[b]))) {
      sub[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sub[0])));
    }
    out += sub;
    last = e;
  });
  out.append(text.substr(last));
  return out;
}

Case synthesize(const Case& source, std::size_t ordinal, const SynonymLexicon& lexicon, Rng& rng) {
  std::vector<std::string> candidates;
  std::set<std::string> seen;
  for_each_word(source.text, [&](std::size_t b, std::size_t e) {
    std::string word = lower(std::string_view(source.text).substr(b, e - b));
    auto it = lexicon.find(word);
    if (it == lexicon.end() || it->second.empty()) return;
    if (seen.insert(word).second) candidates.push_back(std::move(word));
  });

  std::map<std::string, std::string> replacements;
  const std::size_t wanted = 1 + rng.uniform_index(3);
  const std::size_t n = std::min(wanted, candidates.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
    const auto& subs = lexicon.at(candidates[i]);
    replacements[candidates[i]] = subs[rng.uniform_index(subs.size())];
  }

  Case out(source.id + "-aug" + std::to_string(ordinal), substitute_words(source.text, replacements),
           source.label);
  for (const auto& [kind, value] : source.enrichments) {
    if (kind != RepresentationKind::Text) out.set_enrichment(kind, substitute_words(value, replacements));
  }
  return out;
}

}  // namespace

LabeledCorpus balance_classes(const LabeledCorpus& corpus, std::size_t target,
                              const SynonymLexicon& lexicon, std::uint64_t seed) {
  LabeledCorpus out = corpus;
  for (FallacyLabel label : kAllLabels) {
    std::vector<const Case*> originals;
    for (const auto& c : corpus.train) {
      if (c.label == label) originals.push_back(&c);
    }
    if (originals.size() >= target) continue;
    if (originals.empty()) {
      throw AugmentationError("class " + std::string(label_name(label)) +
                              " has no training cases to amplify");
    }
    Rng rng(mix_seed(seed, label_index(label)));
    std::vector<std::size_t> order(originals.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    std::vector<std::size_t> produced(originals.size(), 0);
    const std::size_t need = target - originals.size();
    for (std::size_t n = 0; n < need; ++n) {
      const std::size_t src = order[n % order.size()];
      out.train.push_back(synthesize(*originals[src], ++produced[src], lexicon, rng));
    }
  }
  return out;
}

CaseDatabase::CaseDatabase(std::vector<Case> cases, double ratio, std::uint64_t seed)
    : cases_(std::move(cases)), ratio_(ratio), seed_(seed) {
  std::unordered_set<std::string> ids;
  for (const auto& c : cases_) {
    if (!c.label) throw ConfigError("case database entry '" + c.id + "' has no label");
    if (!ids.insert(c.id).second) throw ConfigError("duplicate case id '" + c.id + "'");
  }
}

void CaseDatabase::build_index(RepresentationKind kind, const Encoder& encoder) {
  std::vector<EmbeddingVector> vectors;
  vectors.reserve(cases_.size());
  std::size_t fallbacks = 0;
  for (const auto& c : cases_) {
    RepresentationKind effective = kind;
    if (!c.has_representation(kind)) {
      effective = RepresentationKind::Text;
      ++fallbacks;
    }
    vectors.push_back(encoder.sentence_embedding(
        TextUnit{c.id + "#" + std::string(kind_name(effective)), represent(c, effective)}));
  }
  if (fallbacks > 0) {
    warn(std::to_string(fallbacks) + " database cases lack the " + std::string(kind_name(kind)) +
         " enrichment; indexed by text");
  }
  index_[kind] = std::move(vectors);
}

bool CaseDatabase::has_index(RepresentationKind kind) const { return index_.contains(kind); }

const std::vector<EmbeddingVector>& CaseDatabase::index(RepresentationKind kind) const {
  auto it = index_.find(kind);
  if (it == index_.end()) {
    throw IndexMissingError("case database has no index for " + std::string(kind_name(kind)));
  }
  return it->second;
}

std::string CaseDatabase::fingerprint() const {
  Sha256Builder h;
  h.add_u64(cases_.size());
  for (const auto& c : cases_) {
    h.add(c.id).add(c.text).add(c.label ? label_name(*c.label) : "");
    for (const auto& [kind, value] : c.enrichments) h.add(kind_name(kind)).add(value);
  }
  h.add_f64(ratio_).add_u64(seed_);
  return h.hex();
}

std::string CaseDatabase::index_hash(RepresentationKind kind) const {
  Sha256Builder h;
  for (const auto& v : index(kind)) {
    h.add_u64(static_cast<std::uint64_t>(v.values.size()));
    h.add_raw(v.values.data(), sizeof(double) * static_cast<std::size_t>(v.values.size()));
  }
  return h.hex();
}

const Case* CaseDatabase::find(std::string_view id) const {
  for (const auto& c : cases_) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

namespace {

CaseDatabase filter_rows(const CaseDatabase& db, const std::vector<bool>& keep,
                         double ratio, std::uint64_t seed,
                         std::map<RepresentationKind, std::vector<EmbeddingVector>>& index_out,
                         const std::map<RepresentationKind, std::vector<EmbeddingVector>>& index_in) {
  std::vector<Case> cases;
  for (std::size_t i = 0; i < db.size(); ++i) {
    if (keep[i]) cases.push_back(db.cases()[i]);
  }
  for (const auto& [kind, rows] : index_in) {
    auto& dst = index_out[kind];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (keep[i]) dst.push_back(rows[i]);
    }
  }
  return CaseDatabase(std::move(cases), ratio, seed);
}

}  // namespace

CaseDatabase subsample_database(const CaseDatabase& db, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("database ratio must lie in (0, 1], got " + std::to_string(ratio));
  }
  std::vector<bool> keep(db.size(), false);
  for (FallacyLabel label : kAllLabels) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < db.size(); ++i) {
      if (db.cases()[i].label == label) rows.push_back(i);
    }
    if (rows.empty()) continue;
    // Permute a row-order-independent ordering so selection is stable.
    std::sort(rows.begin(), rows.end(),
              [&](std::size_t a, std::size_t b) { return db.cases()[a].id < db.cases()[b].id; });
    Rng rng(mix_seed(seed, label_index(label)));
    rng.shuffle(std::span(rows));
    const auto want = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(rows.size())));
    const std::size_t take = std::clamp<std::size_t>(want, 1, rows.size());
    for (std::size_t i = 0; i < take; ++i) keep[rows[i]] = true;
  }
  std::map<RepresentationKind, std::vector<EmbeddingVector>> index;
  CaseDatabase out = filter_rows(db, keep, ratio, seed, index, db.index_);
  out.index_ = std::move(index);
  return out;
}

CaseDatabase without_synthetic(const CaseDatabase& db) {
  std::vector<bool> keep(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) keep[i] = !is_synthetic(db.cases()[i]);
  std::map<RepresentationKind, std::vector<EmbeddingVector>> index;
  CaseDatabase out = filter_rows(db, keep, db.ratio_, db.seed_, index, db.index_);
  out.index_ = std::move(index);
  return out;
}

}  // namespace cbr
