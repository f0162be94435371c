// Copyright 2026 the unicoder-cpp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace unicoder {

/// Word-final marker fused onto the last character of every word before
/// merging, so merges distinguish word-internal from word-final symbols.
inline const std::string kEndOfWord = "</w>";

/// Shared subword vocabulary: one BPE model over all languages. Ids are
/// dense in [0, size()); the five specials occupy the lowest ids, then the
/// learn-time character inventory (sorted), then merge products in merge
/// order. Immutable after learning/loading apart from language registration.
struct Vocab {
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr int kMaskId = 2;
  static constexpr int kBosId = 3;
  static constexpr int kSepId = 4;
  static constexpr int kFirstRegularId = 5;

  std::vector<std::pair<std::string, std::string>> merges;
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> language_names;
  std::unordered_map<std::string, int> language_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int n_languages() const { return static_cast<int>(language_names.size()); }
  bool is_special(int id) const { return id >= 0 && id < kFirstRegularId; }

  /// -1 when the token is unknown.
  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const;  // throws on out-of-range id

  int register_language(const std::string& name);  // idempotent
  int language_id(const std::string& name) const;  // throws if unregistered
};

/// Subword ids plus the language they were encoded under.
struct TokenSequence {
  std::vector<int> ids;
  int lang = -1;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

/// One language's corpus, one sentence per line.
struct CorpusLines {
  std::string lang;
  std::vector<std::string> lines;
};

/// A line drawn by downsample_corpora: which corpus it came from and its text.
struct SampledLine {
  int corpus_index;
  std::string text;
};

/// Draws `budget` lines, choosing corpus ℓ with probability ∝ n_ℓ^alpha and
/// reading each corpus sequentially (wrapping when exhausted). Deterministic
/// for a fixed seed.
std::vector<SampledLine> downsample_corpora(const std::vector<CorpusLines>& corpora,
                                            double alpha, long budget,
                                            std::uint64_t seed);

/// Greedy highest-frequency pair merging over whitespace-pretokenized words.
/// Ties break to the lexicographically smallest pair. Stops early when no
/// pair is left to merge.
Vocab learn_bpe(const std::vector<std::string>& lines, int num_merges);

/// Applies the learned merges in order. Unknown characters become UNK; no
/// other special is ever produced.
TokenSequence encode(const std::string& text, const Vocab& vocab, int lang);
TokenSequence encode(const std::string& text, const Vocab& vocab, const std::string& lang);

/// Per-word token ids (same segmentation encode() flattens).
std::vector<std::vector<int>> encode_word_pieces(const std::string& text, const Vocab& vocab);

/// Inverse of encode up to whitespace normalization; specials render as
/// their sentinel strings.
std::string decode(const TokenSequence& seq, const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

// Pretokenization helpers (exposed for the merge-oracle tests).
std::vector<std::string> split_utf8_chars(const std::string& word);
std::vector<std::string> word_symbols(const std::string& word);  // chars, last + "</w>"

}  // namespace unicoder
