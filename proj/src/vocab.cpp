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

#include "unicoder/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace unicoder {

namespace {

const std::vector<std::string> kSpecialTokens = {"<pad>", "<unk>", "<mask>", "<bos>",
                                                 "<sep>"};

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream is(line);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

using Symbols = std::vector<std::string>;
using MergePair = std::pair<std::string, std::string>;

// One left-to-right pass replacing non-overlapping occurrences of (a,b).
// Learn-time and encode-time segmentation share this exact routine.
void apply_merge(Symbols& sym, const MergePair& m) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < sym.size();) {
    if (r + 1 < sym.size() && sym[r] == m.first && sym[r + 1] == m.second) {
      sym[w++] = m.first + m.second;
      r += 2;
    } else {
      if (w != r) sym[w] = std::move(sym[r]);
      ++w;
      ++r;
    }
  }
  sym.resize(w);
}

// 2^-53-grid uniform in [0,1); avoids distribution implementation drift.
double next_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void add_token(Vocab& v, const std::string& tok) {
  if (v.token_to_id.emplace(tok, v.size()).second) v.id_to_token.push_back(tok);
}

}  // namespace

int Vocab::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? -1 : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("token_of: id " + std::to_string(id) +
                                " out of range [0," + std::to_string(size()) + ")");
  return id_to_token[static_cast<std::size_t>(id)];
}

int Vocab::register_language(const std::string& name) {
  auto it = language_to_id.find(name);
  if (it != language_to_id.end()) return it->second;
  const int id = n_languages();
  language_to_id.emplace(name, id);
  language_names.push_back(name);
  return id;
}

int Vocab::language_id(const std::string& name) const {
  auto it = language_to_id.find(name);
  if (it == language_to_id.end())
    throw std::invalid_argument("language not registered: " + name);
  return it->second;
}

std::vector<std::string> split_utf8_chars(const std::string& word) {
  std::vector<std::string> chars;
  std::size_t i = 0;
  while (i < word.size()) {
    const unsigned char b = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((b & 0x80u) == 0x00u)
      len = 1;
    else if ((b & 0xE0u) == 0xC0u)
      len = 2;
    else if ((b & 0xF0u) == 0xE0u)
      len = 3;
    else if ((b & 0xF8u) == 0xF0u)
      len = 4;
    len = std::min(len, word.size() - i);
    chars.push_back(word.substr(i, len));
    i += len;
  }
  return chars;
}

std::vector<std::string> word_symbols(const std::string& word) {
  Symbols sym = split_utf8_chars(word);
  if (!sym.empty()) sym.back() += kEndOfWord;
  return sym;
}

std::vector<SampledLine> downsample_corpora(const std::vector<CorpusLines>& corpora,
                                            double alpha, long budget,
                                            std::uint64_t seed) {
  if (corpora.empty()) throw std::invalid_argument("downsample_corpora: no corpora");
  if (budget <= 0) throw std::invalid_argument("downsample_corpora: budget must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("downsample_corpora: alpha must be in (0,1]");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const CorpusLines& c : corpora) {
    if (c.lines.empty())
      throw std::invalid_argument("downsample_corpora: empty corpus for " + c.lang);
    total += std::pow(static_cast<double>(c.lines.size()), alpha);
    cumulative.push_back(total);
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> cursor(corpora.size(), 0);
  std::vector<SampledLine> out;
  out.reserve(static_cast<std::size_t>(budget));
  for (long i = 0; i < budget; ++i) {
    const double u = next_uniform(rng) * total;
    std::size_t pick = 0;
    while (pick + 1 < cumulative.size() && u >= cumulative[pick]) ++pick;
    const auto& lines = corpora[pick].lines;
    out.push_back({static_cast<int>(pick), lines[cursor[pick] % lines.size()]});
    ++cursor[pick];
  }
  return out;
}

Vocab learn_bpe(const std::vector<std::string>& lines, int num_merges) {
  if (num_merges < 0) throw std::invalid_argument("learn_bpe: negative merge count");

  // Word frequency table in first-seen order.
  std::vector<std::pair<Symbols, long>> words;
  std::unordered_map<std::string, std::size_t> word_index;
  for (const std::string& line : lines)
    for (const std::string& w : split_whitespace(line)) {
      auto [it, fresh] = word_index.emplace(w, words.size());
      if (fresh)
        words.push_back({word_symbols(w), 1});
      else
        words[it->second].second += 1;
    }
  if (words.empty()) throw std::invalid_argument("learn_bpe: empty stream");

  Vocab vocab;
  for (const std::string& s : kSpecialTokens) add_token(vocab, s);

  // Character inventory from the initial segmentation, sorted for stable ids.
  std::set<std::string> chars;
  for (const auto& [sym, count] : words)
    for (const std::string& s : sym) chars.insert(s);
  for (const std::string& c : chars) add_token(vocab, c);

  for (int m = 0; m < num_merges; ++m) {
    std::map<MergePair, long> pair_counts;
    for (const auto& [sym, count] : words)
      for (std::size_t i = 0; i + 1 < sym.size(); ++i)
        pair_counts[{sym[i], sym[i + 1]}] += count;
    if (pair_counts.empty()) break;

    // Highest count; ties to the lexicographically smallest pair (the map is
    // ordered, so the first maximal entry is that pair).
    MergePair best;
    long best_count = 0;
    for (const auto& [pair, count] : pair_counts)
      if (count > best_count) {
        best = pair;
        best_count = count;
      }

    vocab.merges.push_back(best);
    add_token(vocab, best.first + best.second);
    for (auto& [sym, count] : words) apply_merge(sym, best);
  }
  return vocab;
}

namespace {
Symbols segment_word(const std::string& word, const Vocab& vocab) {
  Symbols sym = word_symbols(word);
  for (const MergePair& m : vocab.merges) apply_merge(sym, m);
  return sym;
}
}  // namespace

std::vector<std::vector<int>> encode_word_pieces(const std::string& text,
                                                 const Vocab& vocab) {
  std::vector<std::vector<int>> out;
  for (const std::string& w : split_whitespace(text)) {
    std::vector<int> ids;
    for (const std::string& s : segment_word(w, vocab)) {
      const int id = vocab.id_of(s);
      ids.push_back(id >= 0 ? id : Vocab::kUnkId);
    }
    out.push_back(std::move(ids));
  }
  return out;
}

TokenSequence encode(const std::string& text, const Vocab& vocab, int lang) {
  if (lang < 0 || lang >= vocab.n_languages())
    throw std::invalid_argument("encode: language id " + std::to_string(lang) +
                                " not registered");
  TokenSequence seq;
  seq.lang = lang;
  for (const auto& word : encode_word_pieces(text, vocab))
    seq.ids.insert(seq.ids.end(), word.begin(), word.end());
  return seq;
}

TokenSequence encode(const std::string& text, const Vocab& vocab, const std::string& lang) {
  return encode(text, vocab, vocab.language_id(lang));
}

std::string decode(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (int id : seq.ids) {
    const std::string& tok = vocab.token_of(id);  // validates the id
    if (vocab.is_special(id)) {
      out += tok;
      out += ' ';
      continue;
    }
    if (tok.size() >= kEndOfWord.size() &&
        tok.compare(tok.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0) {
      out += tok.substr(0, tok.size() - kEndOfWord.size());
      out += ' ';
    } else {
      out += tok;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_vocab: cannot open " + path);
  os << "unicoder-vocab v1\n";
  for (const std::string& s : kSpecialTokens) os << "special " << s << "\n";
  for (int l = 0; l < vocab.n_languages(); ++l)
    os << "lang " << vocab.language_names[static_cast<std::size_t>(l)] << "\n";
  // Non-merge regular tokens are the character inventory, in id order.
  std::set<std::string> products;
  for (const auto& [a, b] : vocab.merges) products.insert(a + b);
  for (int id = Vocab::kFirstRegularId; id < vocab.size(); ++id) {
    const std::string& tok = vocab.id_to_token[static_cast<std::size_t>(id)];
    if (!products.count(tok)) os << "char " << tok << "\n";
  }
  for (const auto& [a, b] : vocab.merges) os << "merge " << a << " " << b << "\n";
  if (!os) throw std::runtime_error("save_vocab: write failure on " + path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_vocab: cannot open " + path);
  std::string header;
  std::getline(is, header);
  if (header != "unicoder-vocab v1")
    throw std::runtime_error("load_vocab: bad header in " + path);

  Vocab vocab;
  std::size_t specials_seen = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "special") {
      std::string tok;
      fields >> tok;
      if (specials_seen >= kSpecialTokens.size() || tok != kSpecialTokens[specials_seen])
        throw std::runtime_error("load_vocab: unexpected special line: " + line);
      add_token(vocab, tok);
      ++specials_seen;
    } else if (kind == "lang") {
      std::string name;
      fields >> name;
      vocab.register_language(name);
    } else if (kind == "char") {
      std::string tok;
      fields >> tok;
      add_token(vocab, tok);
    } else if (kind == "merge") {
      std::string a, b;
      fields >> a >> b;
      if (a.empty() || b.empty())
        throw std::runtime_error("load_vocab: malformed merge line: " + line);
      vocab.merges.push_back({a, b});
      add_token(vocab, a + b);
    } else {
      throw std::runtime_error("load_vocab: unknown record: " + line);
    }
  }
  if (specials_seen != kSpecialTokens.size())
    throw std::runtime_error("load_vocab: missing special tokens in " + path);
  return vocab;
}

}  // namespace unicoder
