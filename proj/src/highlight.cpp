#include "docmatch/highlighters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "docmatch/error.hpp"
#include "docmatch/rouge.hpp"

namespace docmatch {

std::string_view to_string(Method method) noexcept {
  switch (method) {
    case Method::kShap: return "Shap";
    case Method::kExtractiveSummary: return "ExtractiveSummary";
    case Method::kCooccurrence: return "Cooccurrence";
    case Method::kSemantic: return "Semantic";
  }
  return "Shap";
}

std::optional<Method> parse_method(std::string_view name) noexcept {
  for (Method m : {Method::kShap, Method::kExtractiveSummary, Method::kCooccurrence, Method::kSemantic}) {
    if (name == to_string(m)) return m;
  }
  return std::nullopt;
}

nlohmann::ordered_json to_json(const HighlightSet& set) {
  nlohmann::ordered_json out;
  out["method"] = to_string(set.method);
  out["document_id"] = set.document_id;
  out["spans"] = nlohmann::ordered_json::array();
  for (const auto& s : set.spans) {
    out["spans"].push_back(
        {{"start", s.start}, {"end", s.end}, {"channel", s.channel}, {"intensity", s.intensity}});
  }
  return out;
}

HighlightSet highlight_set_from_json(const nlohmann::json& value) {
  HighlightSet set;
  try {
    const auto method = parse_method(value.at("method").get<std::string>());
    if (!method) throw Error(Errc::kValidation, "unknown highlight method " + value.at("method").dump());
    set.method = *method;
    set.document_id = value.at("document_id").get<std::string>();
    for (const auto& s : value.at("spans")) {
      set.spans.push_back({s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(),
                           s.at("channel").get<std::size_t>(), s.at("intensity").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kValidation, std::string("bad highlight set: ") + e.what());
  }
  return set;
}

void validate(const HighlightSet& set, const Document& doc) {
  for (const auto& s : set.spans) {
    if (s.start >= s.end || s.end > doc.length()) {
      throw Error(Errc::kSpanOutOfRange, "[" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                             ") in document of length " + std::to_string(doc.length()));
    }
    if (!(s.intensity >= 0.0 && s.intensity <= 1.0)) {
      throw Error(Errc::kValidation, "intensity outside [0, 1]");
    }
    if (set.method == Method::kShap && s.channel > kNegativeChannel) {
      throw Error(Errc::kValidation, "SHAP spans use the positive or negative channel only");
    }
    if (set.method == Method::kExtractiveSummary && s.channel != 0) {
      throw Error(Errc::kValidation, "extractive summary spans use a single channel");
    }
  }
}

HighlightSet shap_highlights(const Document& article, std::span<const Attribution> attributions) {
  HighlightSet set{Method::kShap, article.id(), {}};
  double max_abs = 0.0;
  for (const auto& a : attributions) max_abs = std::max(max_abs, std::abs(a.score));
  if (max_abs == 0.0) return set;
  for (const auto& a : attributions) {
    const double intensity = std::abs(a.score) / max_abs;
    if (intensity <= 1e-9) continue;
    const auto& token = article.tokens().at(a.token_index);
    set.spans.push_back({token.start, token.end, a.score > 0.0 ? kPositiveChannel : kNegativeChannel,
                         std::min(intensity, 1.0)});
  }
  return set;
}

std::vector<std::size_t> CentroidSummarizer::select(const Document& article, std::size_t k) const {
  const std::size_t n = article.sentences().size();
  if (n == 0 || k == 0) return {};
  std::unordered_map<std::string, std::size_t> local;
  std::vector<std::vector<double>> counts(n);
  std::vector<double> centroid;
  for (std::size_t s = 0; s < n; ++s) {
    for (const auto& term : article.sentence_terms(s, true)) {
      const auto [it, inserted] = local.try_emplace(term, local.size());
      if (inserted) centroid.push_back(0.0);
      if (counts[s].size() <= it->second) counts[s].resize(it->second + 1, 0.0);
      counts[s][it->second] += 1.0;
      centroid[it->second] += 1.0;
    }
  }
  const DocVector centroid_vector = DocVector::from_dense(centroid);
  std::vector<double> score(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) score[s] = affinity_score(DocVector::from_dense(counts[s]), centroid_vector);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&score](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(std::min(k, n));
  std::sort(order.begin(), order.end());
  return order;
}

FileSummarizer FileSummarizer::load(const std::filesystem::path& path, std::shared_ptr<const Summarizer> fallback) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open summarizer file " + path.string());
  FileSummarizer summarizer;
  summarizer.fallback_ = std::move(fallback);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      auto indices = row.at("sentence_indices").get<std::vector<std::size_t>>();
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
      summarizer.selections_.insert_or_assign(row.at("article_id").get<std::string>(), std::move(indices));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return summarizer;
}

std::vector<std::size_t> FileSummarizer::select(const Document& article, std::size_t k) const {
  const auto it = selections_.find(article.id());
  if (it == selections_.end()) {
    if (fallback_) return fallback_->select(article, k);
    throw Error(Errc::kMissingEmbedding, "no extractive selection for " + article.id());
  }
  for (std::size_t index : it->second) {
    if (index >= article.sentences().size()) {
      throw Error(Errc::kSpanOutOfRange, "sentence " + std::to_string(index) + " of " + article.id());
    }
  }
  return it->second;
}

std::vector<std::size_t> extractive_summary(const Document& article, std::size_t k) {
  return CentroidSummarizer{}.select(article, k);
}

HighlightSet extractive_highlights(const Document& article, std::span<const std::size_t> sentences) {
  HighlightSet set{Method::kExtractiveSummary, article.id(), {}};
  for (std::size_t index : sentences) {
    const auto& s = article.sentences().at(index);
    set.spans.push_back({s.start, s.end, 0, 1.0});
  }
  return set;
}

DocVector TfidfSentenceEmbedder::embed(const Document& doc, std::size_t sentence) const {
  return vectorizer_.embed_sentence(doc, sentence);
}

std::string sentence_embedding_key(std::string_view document_id, std::size_t sentence) {
  return std::string(document_id) + "#" + std::to_string(sentence);
}

DocVector TableSentenceEmbedder::embed(const Document& doc, std::size_t sentence) const {
  return table_.vector(sentence_embedding_key(doc.id(), sentence));
}

HighlightSet sentence_highlights(Method method, const Document& summary, const Document& article,
                                 const SimilarityMatrix& similarity, const HighlighterConfig& config) {
  if (config.k == 0) throw Error(Errc::kConfig, "K must be at least 1");
  const std::size_t num_summary = summary.sentences().size();
  const std::size_t num_article = article.sentences().size();
  HighlightSet set{method, article.id(), {}};

  struct Owner {
    std::size_t channel;
    double similarity;
  };
  std::vector<std::optional<Owner>> owner(num_article);
  std::vector<double> channel_max(num_summary, 0.0);
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < num_summary; ++j) {
    const auto& row = similarity.at(j);
    order.clear();
    for (std::size_t i = 0; i < num_article; ++i) {
      if (row.at(i) > 0.0) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    if (order.empty()) continue;
    channel_max[j] = row[order.front()];
    if (order.size() > config.k) order.resize(config.k);
    for (std::size_t i : order) {
      if (!owner[i] || row[i] > owner[i]->similarity) owner[i] = Owner{j, row[i]};
    }
  }

  for (std::size_t i = 0; i < num_article; ++i) {
    if (!owner[i]) continue;
    const auto& s = article.sentences()[i];
    const double intensity = std::min(1.0, owner[i]->similarity / channel_max[owner[i]->channel]);
    set.spans.push_back({s.start, s.end, owner[i]->channel, intensity});
  }
  for (std::size_t i = 0; i < num_article; ++i) {
    if (!owner[i]) continue;
    const std::size_t j = owner[i]->channel;
    const auto article_tokens = article.sentence_tokens(i);
    const auto matches = exact_phrase_matches(summary.sentence_terms(j, false), article.sentence_terms(i, false),
                                              config.min_phrase_tokens);
    for (const auto& match : matches) {
      set.spans.push_back({article_tokens[match.article.start].start, article_tokens[match.article.end - 1].end, j,
                           1.0});
    }
  }
  return set;
}

HighlightSet cooccurrence_highlights(const Document& summary, const Document& article,
                                     const HighlighterConfig& config) {
  const std::size_t num_summary = summary.sentences().size();
  const std::size_t num_article = article.sentences().size();
  std::vector<std::vector<std::string>> article_terms(num_article);
  for (std::size_t i = 0; i < num_article; ++i) article_terms[i] = article.sentence_terms(i, true);
  SimilarityMatrix similarity(num_summary, std::vector<double>(num_article, 0.0));
  for (std::size_t j = 0; j < num_summary; ++j) {
    const auto terms = summary.sentence_terms(j, true);
    for (std::size_t i = 0; i < num_article; ++i) similarity[j][i] = rouge_l_f1(terms, article_terms[i]);
  }
  return sentence_highlights(Method::kCooccurrence, summary, article, similarity, config);
}

HighlightSet semantic_highlights(const Document& summary, const Document& article, const SentenceEmbedder& embedder,
                                 const HighlighterConfig& config) {
  const std::size_t num_summary = summary.sentences().size();
  const std::size_t num_article = article.sentences().size();
  std::vector<DocVector> article_vectors;
  article_vectors.reserve(num_article);
  for (std::size_t i = 0; i < num_article; ++i) article_vectors.push_back(embedder.embed(article, i));
  SimilarityMatrix similarity(num_summary, std::vector<double>(num_article, 0.0));
  for (std::size_t j = 0; j < num_summary; ++j) {
    const DocVector query = embedder.embed(summary, j);
    for (std::size_t i = 0; i < num_article; ++i) similarity[j][i] = affinity_score(query, article_vectors[i]);
  }
  return sentence_highlights(Method::kSemantic, summary, article, similarity, config);
}

HighlightSet summary_channel_highlights(Method method, const Document& summary) {
  HighlightSet set{method, summary.id(), {}};
  for (const auto& s : summary.sentences()) set.spans.push_back({s.start, s.end, s.index, 1.0});
  return set;
}

}  // namespace docmatch
