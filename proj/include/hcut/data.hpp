#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hcut/matrix.hpp"

namespace hcut {

/// Whitespace token vocabulary with four reserved ids.
struct Vocab {
  static constexpr size_t kPad = 0;
  static constexpr size_t kBos = 1;  // "<s>"
  static constexpr size_t kEos = 2;  // "</s>"
  static constexpr size_t kUnk = 3;

  std::vector<std::string> id_to_token{"<pad>", "<s>", "</s>", "<unk>"};
  std::unordered_map<std::string, size_t> token_to_id;

  size_t size() const { return id_to_token.size(); }
  size_t lookup(const std::string& token) const;
  const std::string& token(size_t id) const;

  // Frequency-sorted assignment above the reserved ids, ties broken
  // lexicographically; tokens under min_freq fall through to <unk>.
  static Vocab build(const std::vector<std::string>& texts, size_t min_freq = 1);
};

std::vector<std::string> whitespace_tokens(const std::string& text);

struct Example {
  std::vector<size_t> ids;  // starts with <s>, ends with </s>, may be padded
  MaskFlags mask;           // 1 exactly on non-pad positions
  size_t label = 0;
  int64_t id = 0;

  size_t valid_len() const {
    size_t n = 0;
    for (uint8_t f : mask) n += f ? 1 : 0;
    return n;
  }
};

// <s> + whitespace tokens (truncated to max_len−2) + </s>, then padded up to
// pad_to when pad_to is nonzero.
std::vector<size_t> encode_text(const std::string& text, const Vocab& vocab, size_t max_len);
Example make_example(const std::string& text, size_t label, int64_t id, const Vocab& vocab,
                     size_t max_len, size_t pad_to = 0);

struct TextDataset {
  std::vector<std::string> texts;
  std::vector<size_t> labels;

  size_t size() const { return texts.size(); }
  size_t num_classes() const;
};

TextDataset read_tsv(const std::string& path);
void write_tsv(const TextDataset& ds, const std::string& path);

// Synthetic spurious-correlation benchmark. Every sentence carries
// signal_count tokens from the label's signal vocabulary (they alone
// determine the gold label), neutral filler, and exactly one spurious token:
// with probability rho it belongs to the label's class, otherwise to another
// class. The ood split uses rho_ood, so a model keying on the spurious token
// collapses there while a model reading the signal is unaffected.
struct SpuriousSpec {
  size_t num_classes = 2;
  size_t signal_vocab_per_class = 256;
  size_t neutral_vocab = 200;
  size_t spurious_per_class = 1;
  size_t min_content_len = 10;  // content tokens per sentence, spurious included
  size_t max_content_len = 18;
  double rho_train = 0.95;
  double rho_ood = 0.0;
  size_t signal_count = 3;      // k
  size_t train_size = 2000;
  size_t dev_size = 500;
  size_t ood_size = 500;
  uint64_t seed = 1;

  void validate() const;
};

struct SpuriousBenchmark {
  TextDataset train, dev, ood;
};

SpuriousBenchmark generate_spurious_benchmark(const SpuriousSpec& spec);

}  // namespace hcut
