#include "docmatch/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "docmatch/error.hpp"

namespace docmatch {

DocVector::DocVector(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.first < b.first; });
  for (const auto& [dim, w] : entries) {
    if (!entries_.empty() && entries_.back().first == dim) {
      entries_.back().second += w;
    } else {
      entries_.emplace_back(dim, w);
    }
  }
  std::erase_if(entries_, [](const Entry& e) { return e.second == 0.0; });
  double sq = 0.0;
  for (const auto& e : entries_) sq += e.second * e.second;
  norm_ = std::sqrt(sq);
}

DocVector DocVector::from_dense(std::span<const double> values) {
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0) entries.emplace_back(i, values[i]);
  }
  return DocVector(std::move(entries));
}

double DocVector::weight(std::size_t dim) const noexcept {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), dim,
                                   [](const Entry& e, std::size_t d) { return e.first < d; });
  return it != entries_.end() && it->first == dim ? it->second : 0.0;
}

DocVector DocVector::scaled(double factor) const {
  auto entries = entries_;
  for (auto& e : entries) e.second *= factor;
  return DocVector(std::move(entries));
}

double affinity_score(const DocVector& a, const DocVector& b) noexcept {
  if (a.norm() == 0.0 || b.norm() == 0.0) return 0.0;
  const auto& x = a.entries();
  const auto& y = b.entries();
  double dot = 0.0;
  std::size_t i = 0, j = 0;
  while (i < x.size() && j < y.size()) {
    if (x[i].first < y[j].first) {
      ++i;
    } else if (y[j].first < x[i].first) {
      ++j;
    } else {
      dot += x[i].second * y[j].second;
      ++i, ++j;
    }
  }
  return std::clamp(dot / (a.norm() * b.norm()), -1.0, 1.0);
}

Vectorizer Vectorizer::build(std::span<const Document* const> documents, const VectorizerConfig& config) {
  if (documents.empty()) throw Error(Errc::kEmptyCorpus, "cannot build a vectorizer from zero documents");
  std::map<std::string, std::size_t> df;
  for (const Document* doc : documents) {
    std::set<std::string> seen;
    for (const auto& token : doc->tokens()) {
      if (is_word_token(token)) seen.insert(token.normalized);
    }
    for (const auto& term : seen) ++df[term];
  }
  Vectorizer v;
  v.config_ = config;
  const double n = static_cast<double>(documents.size());
  for (const auto& [term, count] : df) {
    if (count < config.min_df) continue;
    v.terms_.push_back(term);
    v.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  v.index_terms();
  return v;
}

void Vectorizer::index_terms() {
  index_.clear();
  for (std::size_t i = 0; i < terms_.size(); ++i) index_.emplace(terms_[i], i);
}

double Vectorizer::tf_weight(double count) const noexcept {
  if (count <= 0.0) return 0.0;
  return config_.sublinear_tf ? 1.0 + std::log(count) : count;
}

std::optional<std::size_t> Vectorizer::dimension_of(std::string_view term) const {
  const auto it = index_.find(std::string(term));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

DocVector Vectorizer::embed_terms(std::span<const std::string> terms) const {
  std::map<std::size_t, double> counts;
  for (const auto& term : terms) {
    if (const auto dim = dimension_of(term)) counts[*dim] += 1.0;
  }
  std::vector<DocVector::Entry> entries;
  entries.reserve(counts.size());
  for (const auto& [dim, count] : counts) entries.emplace_back(dim, tf_weight(count) * idf_[dim]);
  return DocVector(std::move(entries));
}

DocVector Vectorizer::embed(const Document& doc) const {
  const auto terms = doc.terms(true);
  return embed_terms(terms);
}

DocVector Vectorizer::embed_sentence(const Document& doc, std::size_t sentence) const {
  const auto terms = doc.sentence_terms(sentence, true);
  return embed_terms(terms);
}

nlohmann::ordered_json Vectorizer::to_json() const {
  nlohmann::ordered_json out;
  out["config"] = {{"min_df", config_.min_df}, {"sublinear_tf", config_.sublinear_tf}};
  nlohmann::ordered_json vocabulary = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < terms_.size(); ++i) vocabulary[terms_[i]] = i;
  out["vocabulary"] = std::move(vocabulary);
  out["idf"] = idf_;
  return out;
}

Vectorizer Vectorizer::from_json(const nlohmann::json& artifact) {
  Vectorizer v;
  try {
    v.config_.min_df = artifact.at("config").at("min_df").get<std::size_t>();
    v.config_.sublinear_tf = artifact.at("config").at("sublinear_tf").get<bool>();
    v.idf_ = artifact.at("idf").get<std::vector<double>>();
    const auto& vocabulary = artifact.at("vocabulary");
    v.terms_.assign(vocabulary.size(), std::string());
    for (const auto& [term, index] : vocabulary.items()) {
      const auto i = index.get<std::size_t>();
      if (i >= v.terms_.size() || !v.terms_[i].empty()) {
        throw Error(Errc::kConfig, "vectorizer vocabulary indices are not dense");
      }
      v.terms_[i] = term;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfig, std::string("bad vectorizer artifact: ") + e.what());
  }
  if (v.idf_.size() != v.terms_.size()) throw Error(Errc::kConfig, "vectorizer idf/vocabulary size mismatch");
  for (double idf : v.idf_) {
    if (!std::isfinite(idf) || idf < 0.0) throw Error(Errc::kConfig, "vectorizer idf must be finite and non-negative");
  }
  v.index_terms();
  return v;
}

Vectorizer build_vectorizer(const Corpus& corpus, const VectorizerConfig& config) {
  std::vector<const Document*> articles;
  articles.reserve(corpus.size());
  for (const auto& pair : corpus.pairs()) articles.push_back(&pair.article);
  return Vectorizer::build(articles, config);
}

DocVector embed(const Vectorizer& vectorizer, const Document& doc) { return vectorizer.embed(doc); }

EmbeddingTable EmbeddingTable::parse(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto malformed = [line_no](const std::string& why) {
      return Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw malformed(e.what());
    }
    if (!row.is_object() || !row.contains("id") || !row["id"].is_string() || !row.contains("vector") ||
        !row["vector"].is_array()) {
      throw malformed("expected {\"id\": str, \"vector\": [float]}");
    }
    std::vector<double> values;
    values.reserve(row["vector"].size());
    for (const auto& v : row["vector"]) {
      if (!v.is_number()) throw malformed("non-numeric vector entry");
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw malformed("non-finite vector entry");
      values.push_back(x);
    }
    auto id = row["id"].get<std::string>();
    if (table.rows_.empty()) {
      table.dimension_ = values.size();
    } else if (values.size() != table.dimension_) {
      throw Error(Errc::kDimensionMismatch, id + " has dimension " + std::to_string(values.size()) +
                                                ", expected " + std::to_string(table.dimension_));
    }
    table.rows_.insert_or_assign(std::move(id), std::move(values));
  }
  return table;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open embeddings " + path.string());
  return parse(in);
}

bool EmbeddingTable::contains(std::string_view id) const { return rows_.contains(std::string(id)); }

const std::vector<double>* EmbeddingTable::find(std::string_view id) const {
  const auto it = rows_.find(std::string(id));
  return it == rows_.end() ? nullptr : &it->second;
}

DocVector EmbeddingTable::vector(std::string_view id) const {
  const auto* row = find(id);
  if (row == nullptr) throw Error(Errc::kMissingEmbedding, std::string(id));
  return DocVector::from_dense(*row);
}

EmbeddingTable load_external_embeddings(const std::filesystem::path& path) { return EmbeddingTable::load(path); }

}  // namespace docmatch
