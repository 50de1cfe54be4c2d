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

#pragma once

// BM25 retrieval over a local document corpus.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgboot/error.hpp"
#include "kgboot/io.hpp"
#include "kgboot/text_metrics.hpp"

namespace kgboot {

struct Document {
  std::string doc_id;
  std::string title;
  std::string body;
};

inline Json ToJson(const Document& d) {
  return Json{{"doc_id", d.doc_id}, {"title", d.title}, {"body", d.body}};
}

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
};

// Ranked by score descending, ties by ascending doc_id.
using RetrievalResult = std::vector<ScoredDoc>;

class Bm25Index {
 public:
  struct Posting {
    std::size_t doc = 0;  // position in documents()
    std::size_t tf = 0;
  };

  static constexpr std::string_view kFormat = "kgboot-bm25-index";
  static constexpr int kFormatVersion = 1;

  static Bm25Index Build(std::vector<Document> corpus, Bm25Params params = {}) {
    if (corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "build_index: empty corpus");
    Bm25Index index;
    index.params_ = params;
    index.docs_ = std::move(corpus);
    std::size_t total = 0;
    for (std::size_t i = 0; i < index.docs_.size(); ++i) {
      const auto& doc = index.docs_[i];
      if (doc.body.empty()) {
        throw Error(ErrorCode::kInvalidArgument, "build_index: empty body for " + doc.doc_id);
      }
      if (!index.by_id_.emplace(doc.doc_id, i).second) {
        throw Error(ErrorCode::kInvalidArgument, "build_index: duplicate doc_id " + doc.doc_id);
      }
      const auto tokens = Normalize(doc.title + " " + doc.body).tokens;
      std::map<std::string, std::size_t> tf;
      for (const auto& t : tokens) ++tf[t];
      for (const auto& [term, count] : tf) index.postings_[term].push_back({i, count});
      index.lengths_.push_back(tokens.size());
      total += tokens.size();
    }
    index.avgdl_ = static_cast<double>(total) / static_cast<double>(index.docs_.size());
    return index;
  }

  RetrievalResult Retrieve(std::string_view query, std::size_t k) const {
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "retrieve: k must be >= 1");
    const auto terms = Normalize(query).tokens;
    if (terms.empty()) throw Error(ErrorCode::kInvalidArgument, "retrieve: empty query");
    const std::set<std::string> unique(terms.begin(), terms.end());

    std::vector<double> scores(docs_.size(), 0.0);
    const double n = static_cast<double>(docs_.size());
    for (const auto& term : unique) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double df = static_cast<double>(it->second.size());
      const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
      for (const auto& p : it->second) {
        const double tf = static_cast<double>(p.tf);
        const double norm = params_.k1 * (1.0 - params_.b + params_.b *
                                          static_cast<double>(lengths_[p.doc]) / avgdl_);
        scores[p.doc] += idf * tf * (params_.k1 + 1.0) / (tf + norm);
      }
    }

    RetrievalResult ranked;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      if (scores[i] > 0.0) ranked.push_back({docs_[i].doc_id, scores[i]});
    }
    std::sort(ranked.begin(), ranked.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    });
    if (ranked.size() > k) ranked.resize(k);
    return ranked;
  }

  const Document& Get(std::string_view doc_id) const {
    auto it = by_id_.find(std::string(doc_id));
    if (it == by_id_.end()) {
      throw Error(ErrorCode::kInvalidArgument, "unknown doc_id " + std::string(doc_id));
    }
    return docs_[it->second];
  }

  std::size_t size() const { return docs_.size(); }
  double average_length() const { return avgdl_; }
  const std::vector<std::size_t>& lengths() const { return lengths_; }
  const std::vector<Document>& documents() const { return docs_; }
  const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }
  const Bm25Params& params() const { return params_; }

  std::size_t DocumentFrequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  // Header line, then one document per line with its term frequencies.
  std::string Serialize() const {
    std::string out = Json{{"format", kFormat},
                           {"version", kFormatVersion},
                           {"k1", params_.k1},
                           {"b", params_.b},
                           {"n_docs", docs_.size()},
                           {"avgdl", avgdl_}}
                          .dump();
    out.push_back('\n');
    for (const auto& doc : docs_) {
      out += ToJson(doc).dump();
      out.push_back('\n');
    }
    return out;
  }

  // Rebuilds postings from the stored documents and checks them against the
  // header.
  static Bm25Index Load(const std::filesystem::path& path) {
    std::vector<Document> docs;
    Json header;
    ForEachJsonLine(path, [&](std::size_t line, const Json& obj) {
      if (line == 1 || header.is_null()) {
        header = obj;
        if (header.value("format", "") != kFormat) {
          throw Error(ErrorCode::kIo, path.string() + ": not a kgboot index file");
        }
        if (header.value("version", 0) != kFormatVersion) {
          throw Error(ErrorCode::kIo, path.string() + ": unsupported index version");
        }
        return;
      }
      docs.push_back(DocumentFromJson(obj, path.string(), line));
    });
    if (header.is_null()) throw Error(ErrorCode::kIo, path.string() + ": empty index file");
    auto index = Build(std::move(docs), {header.at("k1").get<double>(), header.at("b").get<double>()});
    if (index.size() != header.at("n_docs").get<std::size_t>()) {
      throw Error(ErrorCode::kIo, path.string() + ": document count mismatch");
    }
    return index;
  }

  static Document DocumentFromJson(const Json& obj, const std::string& where, std::size_t line) {
    const auto field = [&](const char* name) {
      if (!obj.contains(name) || !obj[name].is_string()) {
        throw Error(ErrorCode::kDataset,
                    where + ":" + std::to_string(line) + ": missing string field '" + name + "'");
      }
      return obj[name].get<std::string>();
    };
    return Document{field("doc_id"), field("title"), field("body")};
  }

 private:
  Bm25Params params_;
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<std::size_t> lengths_;
  double avgdl_ = 0.0;
};

inline std::vector<Document> LoadCorpus(const std::filesystem::path& path) {
  std::vector<Document> docs;
  ForEachJsonLine(path, [&](std::size_t line, const Json& obj) {
    docs.push_back(Bm25Index::DocumentFromJson(obj, path.string(), line));
  });
  return docs;
}

// Splits a body into sentence-level lines on newlines and sentence-final
// punctuation followed by whitespace.
inline std::vector<std::string> SplitSentences(std::string_view body) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    const auto first = cur.find_first_not_of(" \t\r\n");
    if (first != std::string::npos) {
      const auto last = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(first, last - first + 1));
    }
    cur.clear();
  };
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c == '\n') {
      flush();
      continue;
    }
    cur.push_back(c);
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == body.size() || body[i + 1] == ' ' || body[i + 1] == '\n')) {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace kgboot
