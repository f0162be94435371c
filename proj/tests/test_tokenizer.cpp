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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

using namespace unicoder;

namespace {

// Independent greedy merger: works on the expanded word-occurrence list and
// recounts pairs from scratch each round. Oracle for learn_bpe.
struct BruteForceBpe {
  std::vector<std::pair<std::string, std::string>> merges;
  std::map<std::string, std::vector<std::string>> segmentation;

  explicit BruteForceBpe(const std::vector<std::string>& lines, int num_merges) {
    std::vector<std::vector<std::string>> occurrences;
    std::vector<std::string> occurrence_words;
    for (const std::string& line : lines) {
      std::istringstream is(line);
      std::string w;
      while (is >> w) {
        occurrences.push_back(word_symbols(w));
        occurrence_words.push_back(w);
      }
    }
    for (int m = 0; m < num_merges; ++m) {
      std::map<std::pair<std::string, std::string>, long> counts;
      for (const auto& sym : occurrences)
        for (std::size_t i = 0; i + 1 < sym.size(); ++i) counts[{sym[i], sym[i + 1]}]++;
      std::pair<std::string, std::string> best;
      long best_count = 0;
      for (const auto& [p, c] : counts)
        if (c > best_count) {
          best = p;
          best_count = c;
        }
      if (best_count == 0) break;
      merges.push_back(best);
      for (auto& sym : occurrences) {
        std::vector<std::string> next;
        for (std::size_t i = 0; i < sym.size();) {
          if (i + 1 < sym.size() && sym[i] == best.first && sym[i + 1] == best.second) {
            next.push_back(best.first + best.second);
            i += 2;
          } else {
            next.push_back(sym[i]);
            i += 1;
          }
        }
        sym = next;
      }
    }
    for (std::size_t i = 0; i < occurrences.size(); ++i)
      segmentation[occurrence_words[i]] = occurrences[i];
  }
};

std::string random_word(std::mt19937_64& rng, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> ch(0, 5);  // small alphabet forces merges
  std::string w;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) w += static_cast<char>('a' + ch(rng));
  return w;
}

}  // namespace

TEST_CASE("zero merges yields character vocab plus specials") {
  Vocab v = learn_bpe({"ab ba"}, 0);
  CHECK(v.merges.empty());
  // specials + {a, b, a</w>, b</w>}
  CHECK(v.size() == Vocab::kFirstRegularId + 4);
  CHECK(v.id_of("<pad>") == Vocab::kPadId);
  CHECK(v.id_of("<sep>") == Vocab::kSepId);
  CHECK(v.id_of("a") >= Vocab::kFirstRegularId);
  CHECK(v.id_of("a" + kEndOfWord) >= Vocab::kFirstRegularId);
}

TEST_CASE("first merge on aaab corpus is (a,a)") {
  BruteForceBpe oracle({"aaab aaab"}, 1);
  REQUIRE(oracle.merges.size() == 1);
  CHECK(oracle.merges[0] == std::pair<std::string, std::string>{"a", "a"});
  Vocab v = learn_bpe({"aaab aaab"}, 1);
  REQUIRE(v.merges.size() == 1);
  CHECK(v.merges[0] == oracle.merges[0]);
}

TEST_CASE("empty stream errors") {
  CHECK_THROWS_AS(learn_bpe({}, 4), std::invalid_argument);
  CHECK_THROWS_AS(learn_bpe({"", "  "}, 4), std::invalid_argument);
}

TEST_CASE("learned merges equal brute-force oracle on small corpora") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<std::string> lines;
    std::uniform_int_distribution<int> nwords(3, 10);
    for (int l = 0; l < 5; ++l) {
      std::string line;
      const int n = nwords(rng);
      for (int w = 0; w < n; ++w) {
        if (w) line += ' ';
        line += random_word(rng, 2, 6);
      }
      lines.push_back(line);
    }
    const int merges = 24;
    Vocab v = learn_bpe(lines, merges);
    BruteForceBpe oracle(lines, merges);
    CHECK(v.merges == oracle.merges);

    // Replaying merges reproduces learn-time segmentation.
    v.register_language("l0");
    for (const auto& [word, segmented] : oracle.segmentation) {
      auto pieces = encode_word_pieces(word, v);
      REQUIRE(pieces.size() == 1);
      std::vector<std::string> toks;
      for (int id : pieces[0]) toks.push_back(v.token_of(id));
      CHECK(toks == segmented);
    }
  }
}

TEST_CASE("learning is deterministic") {
  std::vector<std::string> lines{"the cat sat", "the mat sat flat", "cat cat mat"};
  Vocab a = learn_bpe(lines, 30);
  Vocab b = learn_bpe(lines, 30);
  CHECK(a.merges == b.merges);
  CHECK(a.id_to_token == b.id_to_token);
}

TEST_CASE("encode/decode round trip over the learned character set") {
  std::vector<std::string> lines{"abba baab abab", "bb aa ab ba"};
  Vocab v = learn_bpe(lines, 16);
  v.register_language("l0");
  for (const std::string& text : {std::string("abba baab"), std::string("aa"),
                                  std::string(""), std::string("  ab   ba ")}) {
    TokenSequence seq = encode(text, v, 0);
    std::string norm;
    {
      std::istringstream is(text);
      std::string w;
      while (is >> w) {
        if (!norm.empty()) norm += ' ';
        norm += w;
      }
    }
    CHECK(decode(seq, v) == norm);
  }
  CHECK(encode("", v, 0).ids.empty());
}

TEST_CASE("unknown characters map to UNK and specials are never emitted") {
  Vocab v = learn_bpe({"abc abc cab"}, 8);
  v.register_language("l0");
  TokenSequence seq = encode("abc xyz", v, 0);
  bool has_unk = false;
  for (int id : seq.ids) {
    if (id == Vocab::kUnkId) has_unk = true;
    CHECK(id != Vocab::kPadId);
    CHECK(id != Vocab::kMaskId);
    CHECK(id != Vocab::kBosId);
    CHECK(id != Vocab::kSepId);
  }
  CHECK(has_unk);
  CHECK_THROWS_AS(encode("abc", v, 3), std::invalid_argument);
}

TEST_CASE("same string encodes identically under different languages") {
  Vocab v = learn_bpe({"abba baab", "caab bacc"}, 12);
  v.register_language("l0");
  v.register_language("l1");
  TokenSequence s0 = encode("abba caab", v, 0);
  TokenSequence s1 = encode("abba caab", v, 1);
  CHECK(s0.ids == s1.ids);
  CHECK(s0.lang != s1.lang);
}

TEST_CASE("downsampling: single language truncates to budget") {
  CorpusLines c{"l0", {"one", "two", "three", "four"}};
  auto out = downsample_corpora({c}, 0.5, 3, 7);
  REQUIRE(out.size() == 3);
  CHECK(out[0].text == "one");
  CHECK(out[1].text == "two");
  CHECK(out[2].text == "three");
  CHECK_THROWS_AS(downsample_corpora({c}, 0.5, 0, 7), std::invalid_argument);
}

TEST_CASE("downsampling: equal sizes share evenly at alpha=1") {
  std::vector<CorpusLines> cs;
  for (int l = 0; l < 2; ++l) {
    CorpusLines c{"l" + std::to_string(l), {}};
    for (int i = 0; i < 50; ++i) c.lines.push_back("x");
    cs.push_back(c);
  }
  auto out = downsample_corpora(cs, 1.0, 10000, 11);
  long first = 0;
  for (const auto& s : out) first += s.corpus_index == 0;
  // Binomial(10000, 0.5): 3 sigma = 150
  CHECK(std::abs(first - 5000) < 150);
}

TEST_CASE("downsampling: alpha=0.5 rebalances 100 vs 10000 to about 1:10") {
  std::vector<CorpusLines> cs(2);
  cs[0].lang = "small";
  for (int i = 0; i < 100; ++i) cs[0].lines.push_back("s");
  cs[1].lang = "big";
  for (int i = 0; i < 10000; ++i) cs[1].lines.push_back("b");
  const long budget = 10000;
  auto out = downsample_corpora(cs, 0.5, budget, 5);
  long small = 0;
  for (const auto& s : out) small += s.corpus_index == 0;
  // p = sqrt(100) / (sqrt(100)+sqrt(10000)) = 1/11; 3 sigma ≈ 86
  const double expected = budget / 11.0;
  CHECK(std::abs(small - expected) < 87);
}

TEST_CASE("vocab file round trip") {
  Vocab v = learn_bpe({"abba baab abab", "ccc cab"}, 20);
  v.register_language("l0");
  v.register_language("l1");
  const std::string path =
      (std::filesystem::temp_directory_path() / "unicoder_vocab_test.txt").string();
  save_vocab(v, path);
  Vocab back = load_vocab(path);
  CHECK(back.merges == v.merges);
  CHECK(back.id_to_token == v.id_to_token);
  CHECK(back.language_names == v.language_names);
  CHECK(encode("abba cab", back, 0).ids == encode("abba cab", v, 0).ids);
  std::filesystem::remove(path);

  // Corrupt header rejected.
  const std::string bad =
      (std::filesystem::temp_directory_path() / "unicoder_vocab_bad.txt").string();
  {
    std::ofstream os(bad);
    os << "something-else v9\n";
  }
  CHECK_THROWS_AS(load_vocab(bad), std::runtime_error);
  std::filesystem::remove(bad);
}
