#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lnscope/encoder.hpp"

namespace lnscope {

// Word-level tokenizer: lowercased alphanumeric runs and single punctuation
// characters. Ids 0..4 are the specials below.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecial = 5;

  // Vocabulary from word frequencies, ties broken lexicographically, capped
  // at `max_size` entries including the specials.
  static Tokenizer build(std::string_view text, int max_size);
  static Tokenizer from_tokens(std::vector<std::string> tokens);

  static std::vector<std::string> split_words(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  int id(std::string_view word) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::string to_json() const;
  static Tokenizer from_json(std::string_view text);

 private:
  explicit Tokenizer(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

using Sequence = std::vector<int>;

// Splits on blank lines into documents, tokenizes each and chunks it into
// sequences of at most max_seq_len ids, each wrapped in [CLS] ... [SEP].
// Chunks never span documents.
std::vector<Sequence> tokenize_corpus(std::string_view text, const Tokenizer& tokenizer, int max_seq_len);
std::vector<Sequence> load_corpus(const std::filesystem::path& path, const Tokenizer& tokenizer, int max_seq_len);

std::string read_text_file(const std::filesystem::path& path);

// Replaces ceil(mask_prob * content) positions (never [CLS]/[SEP]) with
// [MASK]. Positions come out ascending.
MlmExample mask_sequence(const Sequence& ids, double mask_prob, std::mt19937_64& rng);

// Tokenizer stored in a mini-encoder checkpoint, if any.
bool has_tokenizer(const Checkpoint& checkpoint);
Tokenizer tokenizer_from_checkpoint(const Checkpoint& checkpoint);
void attach_tokenizer(Checkpoint& checkpoint, const Tokenizer& tokenizer);

}  // namespace lnscope
