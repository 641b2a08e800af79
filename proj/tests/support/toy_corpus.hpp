#pragma once

#include <cstdint>
#include <string>

namespace lnscope::testkit {

// Synthetic topic-structured text: each document draws nouns, verbs and
// adjectives from a Zipf distribution permuted per topic, and sentences
// follow a handful of templates built around frequent function words.
struct ToyCorpusConfig {
  int documents = 400;
  int min_sentences = 4;
  int max_sentences = 12;
  int num_topics = 16;
  int nouns = 900;
  int verbs = 500;
  int adjectives = 400;
  int adverbs = 150;
  double zipf_exponent = 1.1;
  std::uint64_t seed = 1;
};

std::string generate_toy_corpus(const ToyCorpusConfig& config);

}  // namespace lnscope::testkit
