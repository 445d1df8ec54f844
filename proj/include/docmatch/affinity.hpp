#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "docmatch/corpus.hpp"

namespace docmatch {

// Sparse vector, sorted by dimension, with no explicit zeros.
class DocVector {
 public:
  using Entry = std::pair<std::size_t, double>;

  DocVector() = default;
  // Duplicated dimensions are summed.
  explicit DocVector(std::vector<Entry> entries);
  static DocVector from_dense(std::span<const double> values);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  double norm() const noexcept { return norm_; }
  bool is_zero() const noexcept { return entries_.empty(); }
  double weight(std::size_t dim) const noexcept;
  DocVector scaled(double factor) const;

 private:
  std::vector<Entry> entries_;
  double norm_ = 0.0;
};

// Cosine similarity; 0 when either vector has zero norm.
double affinity_score(const DocVector& a, const DocVector& b) noexcept;

struct VectorizerConfig {
  std::size_t min_df = 1;
  bool sublinear_tf = false;
};

// tf-idf over word tokens (punctuation tokens are not terms). The idf is the
// smoothed ln((1 + N) / (1 + df)) + 1 over the N article documents.
class Vectorizer {
 public:
  Vectorizer() = default;
  static Vectorizer build(std::span<const Document* const> documents, const VectorizerConfig& config = {});

  DocVector embed(const Document& doc) const;
  DocVector embed_sentence(const Document& doc, std::size_t sentence) const;
  DocVector embed_terms(std::span<const std::string> terms) const;

  std::optional<std::size_t> dimension_of(std::string_view term) const;
  double idf(std::size_t dim) const { return idf_.at(dim); }
  const std::string& term(std::size_t dim) const { return terms_.at(dim); }
  std::size_t size() const noexcept { return terms_.size(); }
  const VectorizerConfig& config() const noexcept { return config_; }
  double tf_weight(double count) const noexcept;

  nlohmann::ordered_json to_json() const;
  static Vectorizer from_json(const nlohmann::json& artifact);

 private:
  void index_terms();

  VectorizerConfig config_;
  std::vector<std::string> terms_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Throws Error(kEmptyCorpus) on an empty corpus.
Vectorizer build_vectorizer(const Corpus& corpus, const VectorizerConfig& config = {});
DocVector embed(const Vectorizer& vectorizer, const Document& doc);

// Externally computed dense vectors keyed by id, e.g. "p1/article" or "p1/article#3".
class EmbeddingTable {
 public:
  static EmbeddingTable parse(std::istream& in);
  static EmbeddingTable load(const std::filesystem::path& path);

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool contains(std::string_view id) const;
  const std::vector<double>* find(std::string_view id) const;
  // Throws Error(kMissingEmbedding) when absent.
  DocVector vector(std::string_view id) const;

 private:
  std::size_t dimension_ = 0;
  std::unordered_map<std::string, std::vector<double>> rows_;
};

EmbeddingTable load_external_embeddings(const std::filesystem::path& path);

}  // namespace docmatch
