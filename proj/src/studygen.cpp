#include "docmatch/studygen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "docmatch/error.hpp"
#include "docmatch/random.hpp"
#include "docmatch/rouge.hpp"

namespace docmatch {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view name, const std::array<std::pair<E, std::string_view>, N>& table, const char* what) {
  for (const auto& [value, label] : table)
    if (label == name) return value;
  throw Error(Errc::kValidation, std::string("unknown ") + what + " '" + std::string(name) + "'");
}

constexpr std::array<std::pair<Difficulty, std::string_view>, 2> kDifficultyNames{{
    {Difficulty::kEasy, "Easy"},
    {Difficulty::kHard, "Hard"},
}};
constexpr std::array<std::pair<QuestionKind, std::string_view>, 3> kKindNames{{
    {QuestionKind::kScored, "scored"},
    {QuestionKind::kAttentionCheck, "attention_check"},
    {QuestionKind::kTutorial, "tutorial"},
}};
constexpr std::array<std::pair<Condition, std::string_view>, 5> kConditionNames{{
    {Condition::kControl, "Control"},
    {Condition::kShap, "Shap"},
    {Condition::kBertSum, "BertSum"},
    {Condition::kCooccurrence, "Cooccurrence"},
    {Condition::kSemantic, "Semantic"},
}};

template <typename E, std::size_t N>
std::string_view name_of(E value, const std::array<std::pair<E, std::string_view>, N>& table) noexcept {
  for (const auto& [v, label] : table)
    if (v == value) return label;
  return "?";
}

// Two candidates other than `truth`, ordered by score descending (ascending
// when `lowest`), ties to the lower corpus position.
std::array<std::size_t, 2> pick_two(const AffinityIndex& index, std::size_t truth, bool lowest,
                                    std::vector<double>* scores_out) {
  const std::size_t n = index.corpus().size();
  const DocVector& query = index.summary_vector(truth);
  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(n - 1);
  std::vector<double> scores(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    scores[k] = affinity_score(query, index.article_vector(k));
    if (k != truth) ranked.emplace_back(scores[k], k);
  }
  auto better = [lowest](const auto& a, const auto& b) {
    if (a.first != b.first) return lowest ? a.first < b.first : a.first > b.first;
    return a.second < b.second;
  };
  std::partial_sort(ranked.begin(), ranked.begin() + 2, ranked.end(), better);
  if (scores_out) *scores_out = std::move(scores);
  return {ranked[0].second, ranked[1].second};
}

QuestionSpec make_question(const AffinityIndex& index, std::size_t truth, const std::array<std::size_t, 2>& others,
                           const std::vector<double>& scores, std::uint64_t seed, std::string_view stage) {
  const Corpus& corpus = index.corpus();
  const CorpusPair& pair = corpus.pairs()[truth];
  std::array<std::size_t, kCandidates> order{truth, others[0], others[1]};
  Rng rng(derive_seed(seed, std::string(stage) + "/" + pair.id));
  rng.shuffle(order.begin(), order.end());

  QuestionSpec q;
  q.pair_id = pair.id;
  q.summary = pair.summary;
  for (std::size_t i = 0; i < kCandidates; ++i) {
    q.candidates[i] = corpus.pairs()[order[i]].article;
    q.scores[i] = scores[order[i]];
    if (order[i] == truth) q.truth_index = i;
  }
  return q;
}

}  // namespace

std::string_view to_string(Difficulty d) noexcept { return name_of(d, kDifficultyNames); }
std::string_view to_string(QuestionKind k) noexcept { return name_of(k, kKindNames); }
std::string_view to_string(Condition c) noexcept { return name_of(c, kConditionNames); }
Difficulty parse_difficulty(std::string_view name) { return parse_enum(name, kDifficultyNames, "difficulty"); }
QuestionKind parse_question_kind(std::string_view name) { return parse_enum(name, kKindNames, "question kind"); }
Condition parse_condition(std::string_view name) { return parse_enum(name, kConditionNames, "condition"); }

std::optional<Method> method_for(Condition c) noexcept {
  switch (c) {
    case Condition::kShap: return Method::kShap;
    case Condition::kBertSum: return Method::kExtractiveSummary;
    case Condition::kCooccurrence: return Method::kCooccurrence;
    case Condition::kSemantic: return Method::kSemantic;
    case Condition::kControl: break;
  }
  return std::nullopt;
}

QuestionLabel QuestionSpec::label() const {
  return QuestionLabel{id, kind, difficulty, ambiguous, scores, truth_index};
}

AffinityIndex::AffinityIndex(const Corpus& corpus, const Vectorizer& vectorizer, const EmbeddingTable* external)
    : corpus_(corpus) {
  if (external) {
    external_ = std::all_of(corpus.pairs().begin(), corpus.pairs().end(), [&](const CorpusPair& p) {
      return external->contains(article_id(p.id)) && external->contains(summary_id(p.id));
    });
  }
  summaries_.reserve(corpus.size());
  articles_.reserve(corpus.size());
  for (const CorpusPair& p : corpus.pairs()) {
    if (external_) {
      summaries_.push_back(external->vector(summary_id(p.id)));
      articles_.push_back(external->vector(article_id(p.id)));
    } else {
      summaries_.push_back(vectorizer.embed(p.summary));
      articles_.push_back(vectorizer.embed(p.article));
    }
  }
}

QuestionSpec build_question(const AffinityIndex& index, std::string_view pair_id, const QuestionOptions& options) {
  const Corpus& corpus = index.corpus();
  if (corpus.size() < kCandidates)
    throw Error(Errc::kCorpusTooSmall, "need at least 3 articles, have " + std::to_string(corpus.size()));
  const std::size_t truth = corpus.index_of(pair_id);
  std::vector<double> scores;
  const auto distractors = pick_two(index, truth, false, &scores);
  QuestionSpec q = make_question(index, truth, distractors, scores, options.seed, "candidates");
  q.id = std::string(pair_id);
  q.ambiguous = detect_ambiguity(q, options.ambiguity_threshold);
  return q;
}

QuestionSpec build_question(const Corpus& corpus, std::string_view pair_id, const Vectorizer& vectorizer,
                            const QuestionOptions& options) {
  const AffinityIndex index(corpus, vectorizer);
  return build_question(index, pair_id, options);
}

QuestionSpec build_attention_check(const AffinityIndex& index, std::string_view pair_id,
                                   const QuestionOptions& options) {
  const Corpus& corpus = index.corpus();
  if (corpus.size() < kCandidates)
    throw Error(Errc::kCorpusTooSmall, "need at least 3 articles, have " + std::to_string(corpus.size()));
  const std::size_t truth = corpus.index_of(pair_id);
  std::vector<double> scores;
  const auto distractors = pick_two(index, truth, true, &scores);
  QuestionSpec q = make_question(index, truth, distractors, scores, options.seed, "attention");
  q.id = "ac-" + std::string(pair_id);
  q.kind = QuestionKind::kAttentionCheck;
  q.difficulty = Difficulty::kEasy;

  const Document& article = q.candidates[q.truth_index];
  const auto& sentences = article.sentences();
  const std::size_t last = std::min<std::size_t>(2, sentences.size()) - 1;
  q.summary = Document(q.id + "/summary", article.slice(sentences.front().start, sentences[last].end));
  return q;
}

std::size_t argmax_candidate(const std::array<double, kCandidates>& scores) noexcept {
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

double score_gap(const std::array<double, kCandidates>& scores, std::size_t truth_index) noexcept {
  double gap = 0.0;
  for (std::size_t i = 0; i < kCandidates; ++i)
    if (i != truth_index) gap = std::max(gap, std::abs(scores[truth_index] - scores[i]));
  return gap;
}

Difficulty classify_difficulty(const QuestionLabel& question, double tau) {
  if (!(tau > 0.0)) throw Error(Errc::kConfig, "tau must be positive");
  // A tied maximum counts as the model picking the truth only when the truth comes first.
  const bool model_right = argmax_candidate(question.scores) == question.truth_index;
  return model_right && score_gap(question.scores, question.truth_index) >= tau ? Difficulty::kEasy
                                                                                 : Difficulty::kHard;
}

Difficulty classify_difficulty(const QuestionSpec& question, const DifficultyConfig& config) {
  if (!config.tau) throw Error(Errc::kConfig, "tau is unresolved; use resolve_tau over the pool");
  return classify_difficulty(question.label(), *config.tau);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(Errc::kEmptyFilter, "percentile of no values");
  if (!(p >= 0.0 && p <= 100.0)) throw Error(Errc::kConfig, "percentile outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double resolve_tau(std::span<const QuestionSpec> questions, const DifficultyConfig& config) {
  if (config.tau) {
    if (!(*config.tau > 0.0)) throw Error(Errc::kConfig, "tau must be positive");
    return *config.tau;
  }
  std::vector<double> gaps;
  for (const QuestionSpec& q : questions)
    if (q.kind == QuestionKind::kScored) gaps.push_back(score_gap(q.scores, q.truth_index));
  // Degenerate pools (all gaps zero) still need a positive threshold.
  return std::max(percentile(std::move(gaps), config.tau_percentile), 1e-12);
}

double summary_coverage(const Document& summary, const Document& doc) {
  const std::size_t ns = summary.sentences().size();
  if (ns == 0) return 0.0;
  std::vector<std::vector<std::string>> doc_sentences;
  for (std::size_t i = 0; i < doc.sentences().size(); ++i) doc_sentences.push_back(doc.sentence_terms(i, true));
  double total = 0.0;
  for (std::size_t j = 0; j < ns; ++j) {
    const auto terms = summary.sentence_terms(j, true);
    double best = 0.0;
    for (const auto& s : doc_sentences) best = std::max(best, rouge_l_f1(terms, s));
    total += best;
  }
  return total / static_cast<double>(ns);
}

bool detect_ambiguity(const QuestionSpec& question, double threshold) {
  for (std::size_t i = 0; i < kCandidates; ++i) {
    if (i == question.truth_index) continue;
    if (summary_coverage(question.summary, question.candidates[i]) >= threshold) return true;
  }
  return false;
}

nlohmann::ordered_json to_json(const SessionPlan& plan) {
  nlohmann::ordered_json out;
  out["condition"] = to_string(plan.condition);
  out["seed"] = plan.seed;
  auto& slots = out["questions"] = nlohmann::ordered_json::array();
  for (const SessionSlot& s : plan.slots) slots.push_back({{"id", s.question_id}, {"kind", to_string(s.kind)}});
  return out;
}

SessionPlan session_plan_from_json(const nlohmann::json& value) {
  try {
    SessionPlan plan;
    plan.condition = parse_condition(value.at("condition").get<std::string>());
    plan.seed = value.at("seed").get<std::uint64_t>();
    for (const auto& s : value.at("questions"))
      plan.slots.push_back({s.at("id").get<std::string>(), parse_question_kind(s.at("kind").get<std::string>())});
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kValidation, std::string("session plan: ") + e.what());
  }
}

SessionPlan assemble_session(std::span<const QuestionLabel> pool, Condition condition, std::uint64_t seed) {
  std::vector<const QuestionLabel*> easy, hard, checks;
  for (const QuestionLabel& q : pool) {
    if (q.kind == QuestionKind::kAttentionCheck) {
      checks.push_back(&q);
    } else if (q.kind == QuestionKind::kScored && !q.ambiguous) {
      (q.difficulty == Difficulty::kEasy ? easy : hard).push_back(&q);
    }
  }
  auto require = [](const char* kind, std::size_t have, std::size_t need) {
    if (have < need)
      throw Error(Errc::kInsufficientPool, std::string(kind) + " have " + std::to_string(have) + " need " +
                                               std::to_string(need));
  };
  require("Easy", easy.size(), kEasyPerSession);
  require("Hard", hard.size(), kHardPerSession);
  require("AttentionCheck", checks.size(), kAttentionChecksPerSession);

  Rng rng(seed);
  auto sample = [&rng](std::vector<const QuestionLabel*>& from, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) std::swap(from[i], from[i + rng.below(from.size() - i)]);
    return std::vector<const QuestionLabel*>(from.begin(), from.begin() + static_cast<std::ptrdiff_t>(k));
  };
  std::vector<const QuestionLabel*> scored = sample(easy, kEasyPerSession);
  const auto hard_pick = sample(hard, kHardPerSession);
  scored.insert(scored.end(), hard_pick.begin(), hard_pick.end());
  rng.shuffle(scored.begin(), scored.end());
  const auto check_pick = sample(checks, kAttentionChecksPerSession);

  std::vector<std::size_t> positions(kQuestionsPerSession);
  std::iota(positions.begin(), positions.end(), 0);
  for (std::size_t i = 0; i < kAttentionChecksPerSession; ++i)
    std::swap(positions[i], positions[i + rng.below(positions.size() - i)]);
  std::vector<bool> is_check(kQuestionsPerSession, false);
  for (std::size_t i = 0; i < kAttentionChecksPerSession; ++i) is_check[positions[i]] = true;

  SessionPlan plan;
  plan.condition = condition;
  plan.seed = seed;
  std::size_t next_scored = 0, next_check = 0;
  for (std::size_t pos = 0; pos < kQuestionsPerSession; ++pos) {
    const QuestionLabel* q = is_check[pos] ? check_pick[next_check++] : scored[next_scored++];
    plan.slots.push_back({q->id, q->kind});
  }
  return plan;
}

double model_follower_accuracy(std::span<const QuestionLabel> pool, DifficultyFilter filter) {
  std::size_t n = 0, right = 0;
  for (const QuestionLabel& q : pool) {
    if (q.kind != QuestionKind::kScored) continue;
    if (filter == DifficultyFilter::kEasy && q.difficulty != Difficulty::kEasy) continue;
    if (filter == DifficultyFilter::kHard && q.difficulty != Difficulty::kHard) continue;
    ++n;
    if (argmax_candidate(q.scores) == q.truth_index) ++right;
  }
  if (n == 0) throw Error(Errc::kEmptyFilter, "no questions match the difficulty filter");
  return static_cast<double>(right) / static_cast<double>(n);
}

std::vector<std::string> curate_hard_pool(std::span<const QuestionLabel> pool, double target, std::uint64_t seed) {
  if (!(target >= 0.0 && target <= 1.0)) throw Error(Errc::kConfig, "target accuracy outside [0, 1]");
  std::vector<const QuestionLabel*> right, wrong;
  for (const QuestionLabel& q : pool) {
    if (q.kind != QuestionKind::kScored || q.difficulty != Difficulty::kHard) continue;
    (argmax_candidate(q.scores) == q.truth_index ? right : wrong).push_back(&q);
  }
  std::size_t keep_right = 0, keep_wrong = 0;
  for (std::size_t total = right.size() + wrong.size(); total > 0; --total) {
    const auto r = static_cast<std::size_t>(std::llround(target * static_cast<double>(total)));
    if (r <= right.size() && total - r <= wrong.size()) {
      keep_right = r;
      keep_wrong = total - r;
      break;
    }
  }
  Rng rng(derive_seed(seed, "curate"));
  rng.shuffle(right.begin(), right.end());
  rng.shuffle(wrong.begin(), wrong.end());
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < keep_right; ++i) ids.push_back(right[i]->id);
  for (std::size_t i = 0; i < keep_wrong; ++i) ids.push_back(wrong[i]->id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------

namespace {

template <typename K>
nlohmann::ordered_json html_map_json(const std::map<K, std::string>& m) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m) out[std::string(to_string(k))] = v;
  return out;
}

std::map<Condition, std::string> html_map_from(const nlohmann::json& value) {
  std::map<Condition, std::string> out;
  for (const auto& [k, v] : value.items()) out[parse_condition(k)] = v.get<std::string>();
  return out;
}

}  // namespace

nlohmann::ordered_json to_json(const PoolQuestion& q) {
  nlohmann::ordered_json out;
  out["id"] = q.label.id;
  out["kind"] = to_string(q.label.kind);
  out["pair_id"] = q.pair_id;
  out["difficulty"] = to_string(q.label.difficulty);
  out["ambiguous"] = q.label.ambiguous;
  out["truth_index"] = q.label.truth_index;
  out["scores"] = q.label.scores;
  out["summary_id"] = q.summary_id;
  out["summary_text"] = q.summary_text;
  out["summary_html"] = html_map_json(q.summary_html);
  auto& cands = out["candidates"] = nlohmann::ordered_json::array();
  for (const CandidateStimulus& c : q.candidates) {
    nlohmann::ordered_json cj;
    cj["document_id"] = c.document_id;
    nlohmann::ordered_json hl = nlohmann::ordered_json::object();
    for (const auto& [m, set] : c.highlights) hl[std::string(to_string(m))] = to_json(set);
    cj["highlights"] = std::move(hl);
    cj["html"] = html_map_json(c.html);
    cands.push_back(std::move(cj));
  }
  if (!q.justification.empty()) out["justification"] = q.justification;
  return out;
}

PoolQuestion pool_question_from_json(const nlohmann::json& value) {
  try {
    PoolQuestion q;
    q.label.id = value.at("id").get<std::string>();
    q.label.kind = parse_question_kind(value.at("kind").get<std::string>());
    q.label.difficulty = parse_difficulty(value.at("difficulty").get<std::string>());
    q.label.ambiguous = value.at("ambiguous").get<bool>();
    q.label.truth_index = value.at("truth_index").get<std::size_t>();
    if (q.label.truth_index >= kCandidates) throw Error(Errc::kValidation, "truth_index out of range");
    const auto& scores = value.at("scores");
    if (!scores.is_array() || scores.size() != kCandidates)
      throw Error(Errc::kValidation, "scores must hold 3 values");
    for (std::size_t i = 0; i < kCandidates; ++i) q.label.scores[i] = scores[i].get<double>();
    q.pair_id = value.at("pair_id").get<std::string>();
    q.summary_id = value.at("summary_id").get<std::string>();
    q.summary_text = value.at("summary_text").get<std::string>();
    q.summary_html = html_map_from(value.at("summary_html"));
    const auto& cands = value.at("candidates");
    if (!cands.is_array() || cands.size() != kCandidates)
      throw Error(Errc::kValidation, "candidates must hold 3 entries");
    for (std::size_t i = 0; i < kCandidates; ++i) {
      CandidateStimulus& c = q.candidates[i];
      c.document_id = cands[i].at("document_id").get<std::string>();
      for (const auto& [name, set] : cands[i].at("highlights").items()) {
        const auto method = parse_method(name);
        if (!method) throw Error(Errc::kValidation, "unknown highlight method '" + name + "'");
        c.highlights[*method] = highlight_set_from_json(set);
      }
      c.html = html_map_from(cands[i].at("html"));
    }
    q.justification = value.value("justification", std::string());
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kValidation, std::string("pool question: ") + e.what());
  }
}

std::vector<PoolQuestion> load_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kPoolUnavailable, "cannot open " + path.string());
  std::vector<PoolQuestion> pool;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      pool.push_back(pool_question_from_json(value));
    } catch (const Error& e) {
      throw Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pool;
}

void write_pool(std::ostream& out, std::span<const PoolQuestion> pool) {
  for (const PoolQuestion& q : pool) out << to_json(q).dump() << '\n';
}

}  // namespace docmatch
