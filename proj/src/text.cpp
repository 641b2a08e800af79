#include "lnscope/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "lnscope/error.hpp"

namespace lnscope {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

std::vector<std::string_view> split_documents(std::string_view text) {
  std::vector<std::string_view> docs;
  std::size_t start = 0;
  std::size_t pos = 0;
  auto flush = [&](std::size_t end) {
    if (end > start) docs.push_back(text.substr(start, end - start));
  };
  while (pos < text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::size_t line_end = eol == std::string_view::npos ? text.size() : eol;
    const auto line = text.substr(pos, line_end - pos);
    const bool blank = std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
    if (blank) {
      flush(pos);
      start = line_end + 1;
    }
    pos = line_end + 1;
  }
  if (start < text.size()) flush(text.size());
  return docs;
}

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (!current.empty()) words.push_back(std::exchange(current, {}));
    if (!std::isspace(c)) words.emplace_back(1, static_cast<char>(c));
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Tokenizer Tokenizer::build(std::string_view text, int max_size) {
  if (max_size < kNumSpecial) throw UsageError("vocabulary size must be at least " + std::to_string(kNumSpecial));
  std::map<std::string, std::int64_t> counts;
  for (auto& w : split_words(text)) ++counts[w];
  for (const auto& s : special_tokens()) counts.erase(s);
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  // map order is lexicographic, so a stable sort on count keeps ties sorted
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = special_tokens();
  for (auto& [word, count] : ranked) {
    if (static_cast<int>(tokens.size()) >= max_size) break;
    tokens.push_back(word);
  }
  return Tokenizer(std::move(tokens));
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < special_tokens().size() ||
      !std::equal(special_tokens().begin(), special_tokens().end(), tokens.begin())) {
    throw DataError("vocabulary must start with the special tokens");
  }
  return Tokenizer(std::move(tokens));
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

int Tokenizer::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= size()) throw UsageError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::string Tokenizer::to_json() const { return nlohmann::json(tokens_).dump(); }

Tokenizer Tokenizer::from_json(std::string_view text) {
  try {
    return from_tokens(nlohmann::json::parse(text).get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed vocabulary: ") + e.what());
  }
}

std::vector<Sequence> tokenize_corpus(std::string_view text, const Tokenizer& tokenizer, int max_seq_len) {
  if (max_seq_len < 3) throw UsageError("max_seq_len must be at least 3");
  const std::size_t content = static_cast<std::size_t>(max_seq_len - 2);
  std::vector<Sequence> out;
  for (auto doc : split_documents(text)) {
    const auto ids = tokenizer.encode(doc);
    for (std::size_t start = 0; start < ids.size(); start += content) {
      const std::size_t end = std::min(ids.size(), start + content);
      Sequence seq;
      seq.reserve(end - start + 2);
      seq.push_back(Tokenizer::kCls);
      seq.insert(seq.end(), ids.begin() + static_cast<std::ptrdiff_t>(start), ids.begin() + static_cast<std::ptrdiff_t>(end));
      seq.push_back(Tokenizer::kSep);
      out.push_back(std::move(seq));
    }
  }
  if (out.empty()) throw DataError("corpus contains no tokens");
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<Sequence> load_corpus(const std::filesystem::path& path, const Tokenizer& tokenizer, int max_seq_len) {
  return tokenize_corpus(read_text_file(path), tokenizer, max_seq_len);
}

MlmExample mask_sequence(const Sequence& ids, double mask_prob, std::mt19937_64& rng) {
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw UsageError("mask_prob must lie in (0, 1)");
  std::vector<int> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != Tokenizer::kCls && ids[i] != Tokenizer::kSep && ids[i] != Tokenizer::kPad) {
      candidates.push_back(static_cast<int>(i));
    }
  }
  MlmExample ex;
  ex.input_ids = ids;
  if (candidates.empty()) return ex;
  const auto n = static_cast<std::size_t>(std::ceil(mask_prob * static_cast<double>(candidates.size()) - 1e-9));
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(n);
  std::sort(candidates.begin(), candidates.end());
  for (int p : candidates) {
    ex.positions.push_back(p);
    ex.labels.push_back(ids[p]);
    ex.input_ids[p] = Tokenizer::kMask;
  }
  return ex;
}

bool has_tokenizer(const Checkpoint& checkpoint) { return checkpoint.metadata().count(kMetaVocab) != 0; }

Tokenizer tokenizer_from_checkpoint(const Checkpoint& checkpoint) {
  auto it = checkpoint.metadata().find(kMetaVocab);
  if (it == checkpoint.metadata().end()) throw DataError("checkpoint carries no vocabulary");
  return Tokenizer::from_json(it->second);
}

void attach_tokenizer(Checkpoint& checkpoint, const Tokenizer& tokenizer) {
  checkpoint.metadata()[kMetaVocab] = tokenizer.to_json();
}

}  // namespace lnscope
