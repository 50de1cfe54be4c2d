// Copyright 2026 The kgboot Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kgboot/retrieval.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"

namespace kgboot {
namespace {

std::vector<Document> RandomCorpus(std::mt19937_64& rng, std::size_t n_docs, int vocab) {
  std::vector<Document> docs;
  std::uniform_int_distribution<int> len(3, 20), tok(0, vocab - 1);
  for (std::size_t i = 0; i < n_docs; ++i) {
    std::string body;
    const int l = len(rng);
    for (int j = 0; j < l; ++j) body += "w" + std::to_string(tok(rng)) + " ";
    char id[32];
    std::snprintf(id, sizeof id, "d%03zu", i);
    docs.push_back({id, "", body});
  }
  return docs;
}

std::vector<std::vector<std::string>> Tokenized(const std::vector<Document>& docs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& d : docs) out.push_back(Normalize(d.title + " " + d.body).tokens);
  return out;
}

TEST(Bm25IndexTest, BuildExamples) {
  const auto one = Bm25Index::Build({{"x", "", "a b"}});
  EXPECT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one.average_length(), 2.0);

  const auto two = Bm25Index::Build({{"x", "", "a b"}, {"y", "", "a c"}});
  EXPECT_EQ(two.DocumentFrequency("a"), 2u);
  EXPECT_EQ(two.DocumentFrequency("b"), 1u);

  EXPECT_THROW(Bm25Index::Build({}), Error);
  EXPECT_THROW(Bm25Index::Build({{"x", "", "a"}, {"x", "", "b"}}), Error);
}

TEST(Bm25IndexTest, PostingsMatchNaiveRecount) {
  std::mt19937_64 rng(3);
  const auto docs = RandomCorpus(rng, 50, 40);
  const auto index = Bm25Index::Build(docs);
  const auto toks = Tokenized(docs);

  std::size_t total = 0;
  for (const auto& t : toks) total += t.size();
  EXPECT_NEAR(index.average_length(), static_cast<double>(total) / 50.0, 1e-9);

  std::size_t checked = 0;
  for (const auto& [term, postings] : index.postings()) {
    std::size_t df = 0;
    for (std::size_t d = 0; d < toks.size(); ++d) {
      const auto tf = static_cast<std::size_t>(std::count(toks[d].begin(), toks[d].end(), term));
      if (tf == 0) continue;
      ASSERT_LT(df, postings.size());
      EXPECT_EQ(postings[df].doc, d);
      EXPECT_EQ(postings[df].tf, tf);
      ++df;
    }
    EXPECT_EQ(df, postings.size()) << term;
    checked += postings.size();
  }
  EXPECT_GT(checked, 0u);
}

TEST(Bm25IndexTest, RetrieveExamples) {
  const auto index = Bm25Index::Build({{"a", "", "red fish"}, {"b", "", "blue fish"}});
  EXPECT_TRUE(index.Retrieve("zebra", 5).empty());
  EXPECT_THROW(index.Retrieve("?!", 5), Error);
  EXPECT_THROW(index.Retrieve("fish", 0), Error);

  const auto single = Bm25Index::Build({{"only", "", "gagarin flew first"}});
  const auto r = single.Retrieve("gagarin", 3);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].doc_id, "only");
}

TEST(Bm25IndexTest, FiveDocTwoTermQueryMatchesFormula) {
  const std::vector<Document> docs{
      {"d1", "", "the cosmonaut yuri gagarin orbited earth"},
      {"d2", "", "neil armstrong walked on the moon"},
      {"d3", "", "gagarin was born in klushino"},
      {"d4", "", "the moon orbits the earth every month"},
      {"d5", "", "space flight history"}};
  const auto index = Bm25Index::Build(docs);
  const auto toks = Tokenized(docs);
  const std::vector<std::string> q{"gagarin", "earth"};
  const auto result = index.Retrieve("Gagarin earth", 5);

  std::vector<ScoredDoc> expected;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const double s = oracle::Bm25(toks, d, q);
    if (s > 0) expected.push_back({docs[d].doc_id, s});
  }
  std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
  ASSERT_EQ(result.size(), expected.size());
  for (std::size_t i = 0; i < result.size(); ++i) {
    EXPECT_EQ(result[i].doc_id, expected[i].doc_id);
    EXPECT_NEAR(result[i].score, expected[i].score, 1e-9);
  }
  EXPECT_EQ(result[0].doc_id, "d1");
}

TEST(Bm25IndexTest, ScoresMatchBruteForceOnRandomCorpora) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto docs = RandomCorpus(rng, 10 + trial * 4, 30);
    const auto index = Bm25Index::Build(docs);
    const auto toks = Tokenized(docs);
    std::uniform_int_distribution<int> tok(0, 35);
    for (int qi = 0; qi < 10; ++qi) {
      std::vector<std::string> q{"w" + std::to_string(tok(rng)), "w" + std::to_string(tok(rng))};
      const auto result = index.Retrieve(q[0] + " " + q[1], docs.size());
      std::size_t positive = 0;
      for (std::size_t d = 0; d < docs.size(); ++d) {
        if (oracle::Bm25(toks, d, q) > 0) ++positive;
      }
      ASSERT_EQ(result.size(), positive);
      for (std::size_t i = 0; i < result.size(); ++i) {
        std::size_t d = 0;
        while (docs[d].doc_id != result[i].doc_id) ++d;
        ASSERT_NEAR(result[i].score, oracle::Bm25(toks, d, q), 1e-9);
        if (i > 0) {
          ASSERT_TRUE(result[i - 1].score > result[i].score ||
                      (result[i - 1].score == result[i].score &&
                       result[i - 1].doc_id < result[i].doc_id));
        }
      }
    }
  }
}

TEST(Bm25IndexTest, IrrelevantDocumentKeepsRelativeOrder) {
  std::mt19937_64 rng(23);
  auto docs = RandomCorpus(rng, 30, 20);
  const auto before = Bm25Index::Build(docs).Retrieve("w1 w2 w3", 30);
  docs.push_back({"zz-extra", "", "unrelated filler tokens only"});
  const auto after = Bm25Index::Build(docs).Retrieve("w1 w2 w3", 31);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].doc_id, after[i].doc_id);
}

TEST(Bm25IndexTest, SerializeRoundTripIsDeterministic) {
  std::mt19937_64 rng(29);
  const auto index = Bm25Index::Build(RandomCorpus(rng, 25, 15));
  const auto path = std::filesystem::temp_directory_path() / "kgboot_index_test.jsonl";
  WriteFileAtomic(path, index.Serialize());
  const auto loaded = Bm25Index::Load(path);
  EXPECT_EQ(loaded.Serialize(), index.Serialize());
  const auto a = index.Retrieve("w3 w4", 10);
  const auto b = loaded.Retrieve("w3 w4", 10);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].doc_id, b[i].doc_id);
    EXPECT_EQ(a[i].score, b[i].score);
  }
  std::filesystem::remove(path);
}

TEST(SplitSentencesTest, SplitsOnTerminators) {
  EXPECT_EQ(SplitSentences("a b. c d.\ne"), (std::vector<std::string>{"a b.", "c d.", "e"}));
  EXPECT_EQ(SplitSentences("3.5 is a number"), (std::vector<std::string>{"3.5 is a number"}));
}

}  // namespace
}  // namespace kgboot
