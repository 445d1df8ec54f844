#include "docmatch/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include "docmatch/error.hpp"
#include "docmatch/http.hpp"
#include "docmatch/service.hpp"

namespace docmatch {

namespace {

template <typename T>
void read_key(const nlohmann::json& v, const char* key, T& target) {
  if (const auto it = v.find(key); it != v.end() && !it->is_null()) target = it->get<T>();
}

template <typename T>
void read_key(const nlohmann::json& v, const char* key, std::optional<T>& target) {
  if (const auto it = v.find(key); it != v.end() && !it->is_null()) target = it->get<T>();
}

void read_path(const nlohmann::json& v, const char* key, std::optional<std::filesystem::path>& target) {
  if (const auto it = v.find(key); it != v.end() && !it->is_null()) target = it->get<std::string>();
}

void check_keys(const nlohmann::json& v, std::initializer_list<std::string_view> allowed, const char* where) {
  for (const auto& [key, value] : v.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(Errc::kConfig, std::string("unknown ") + where + " key '" + key + "'");
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoError, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(Errc::kIoError, "write to " + path.string() + " failed");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::kIoError, "cannot create " + dir.string() + ": " + ec.message());
}

unsigned thread_count(unsigned requested, std::size_t work) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(requested ? requested : hw, work)));
}

// Runs fn(i) for i in [0, n); results must be written to per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = thread_count(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

const char kCandidateLetters[] = {'A', 'B', 'C'};

std::string tutorial_justification(const QuestionSpec& q) {
  const std::size_t top = argmax_candidate(q.scores);
  const char truth = kCandidateLetters[q.truth_index];
  if (top == q.truth_index)
    return std::string("Candidate ") + truth +
           " is the match. Every summary sentence is supported by details in it, and it also has the highest "
           "affinity score.";
  return std::string("Candidate ") + truth + " is the match even though candidate " + kCandidateLetters[top] +
         " has a higher affinity score. Only candidate " + truth +
         " contains the details that each summary sentence reports.";
}

struct IngestArtifacts {
  Corpus corpus;
  Vectorizer vectorizer;
};

IngestArtifacts read_ingest(const PipelineConfig& config) {
  const auto corpus_path = config.out / "corpus.jsonl";
  const auto vec_path = config.out / "vectorizer.json";
  if (!std::filesystem::exists(corpus_path) || !std::filesystem::exists(vec_path))
    throw Error(Errc::kIoError, "missing ingest artifacts in " + config.out.string() + "; run ingest first");
  IngestArtifacts a;
  a.corpus = load_corpus(corpus_path);
  try {
    a.vectorizer = Vectorizer::from_json(nlohmann::json::parse(read_file(vec_path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::kMalformedLine, vec_path.string() + ": " + e.what());
  }
  return a;
}

std::shared_ptr<const Summarizer> make_summarizer(const PipelineConfig& config) {
  auto centroid = std::make_shared<CentroidSummarizer>();
  if (!config.summarizer_file) return centroid;
  return std::make_shared<FileSummarizer>(FileSummarizer::load(*config.summarizer_file, centroid));
}

}  // namespace

PipelineConfig pipeline_config_from_json(const nlohmann::json& v, PipelineConfig c) {
  if (!v.is_object()) throw Error(Errc::kConfig, "config must be a JSON object");
  check_keys(v,
             {"corpus", "pool", "embeddings", "summarizer_file", "palette", "responses", "pilot", "data_dir",
              "static_dir", "out", "seed", "min_df", "sublinear_tf", "k", "shap_samples", "min_phrase_tokens", "tau",
              "tau_percentile", "target_hard_model_accuracy", "ambiguity_threshold", "attention_checks", "fwer",
              "comparisons", "n_permutations", "bootstrap_samples", "power", "bind", "admin_token", "grace_seconds",
              "threads"},
             "config");
  try {
    read_path(v, "corpus", c.corpus);
    read_path(v, "pool", c.pool);
    read_path(v, "embeddings", c.embeddings);
    read_path(v, "summarizer_file", c.summarizer_file);
    read_path(v, "palette", c.palette);
    read_path(v, "responses", c.responses);
    read_path(v, "pilot", c.pilot);
    read_path(v, "data_dir", c.data_dir);
    read_path(v, "static_dir", c.static_dir);
    if (v.contains("out")) c.out = v["out"].get<std::string>();
    read_key(v, "seed", c.seed);
    read_key(v, "min_df", c.vectorizer.min_df);
    read_key(v, "sublinear_tf", c.vectorizer.sublinear_tf);
    read_key(v, "k", c.highlighter.k);
    read_key(v, "shap_samples", c.highlighter.shap_samples);
    read_key(v, "min_phrase_tokens", c.highlighter.min_phrase_tokens);
    read_key(v, "tau", c.difficulty.tau);
    read_key(v, "tau_percentile", c.difficulty.tau_percentile);
    read_key(v, "target_hard_model_accuracy", c.difficulty.target_hard_model_accuracy);
    read_key(v, "ambiguity_threshold", c.ambiguity_threshold);
    read_key(v, "attention_checks", c.attention_checks);
    read_key(v, "fwer", c.stats.fwer);
    read_key(v, "comparisons", c.stats.comparisons);
    read_key(v, "n_permutations", c.stats.n_permutations);
    read_key(v, "bootstrap_samples", c.stats.bootstrap_samples);
    read_key(v, "bind", c.bind);
    read_key(v, "admin_token", c.admin_token);
    read_key(v, "threads", c.threads);
    if (v.contains("grace_seconds")) c.grace_ms = std::llround(v["grace_seconds"].get<double>() * 1000.0);
    if (const auto it = v.find("power"); it != v.end()) {
      const auto& p = *it;
      check_keys(p,
                 {"n_grid", "effect_sizes", "n_simulations", "mode", "control_mean", "control_sd", "n_permutations",
                  "alpha"},
                 "power");
      read_key(p, "n_grid", c.power_grid);
      read_key(p, "effect_sizes", c.power_effects);
      read_key(p, "n_simulations", c.power.n_simulations);
      read_key(p, "control_mean", c.power.control_mean);
      read_key(p, "control_sd", c.power.control_sd);
      read_key(p, "n_permutations", c.power.n_permutations);
      read_key(p, "alpha", c.power.alpha);
      if (p.contains("mode")) {
        const std::string mode = p["mode"].get<std::string>();
        if (mode == "gaussian") c.power.mode = PowerMode::kGaussian;
        else if (mode == "empirical") c.power.mode = PowerMode::kEmpirical;
        else throw Error(Errc::kConfig, "power.mode must be gaussian or empirical");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfig, e.what());
  }
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kConfig, "cannot open config " + path.string());
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::kConfig, path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(v, std::move(base));
}

std::uint64_t stage_seed(const PipelineConfig& config, std::string_view stage) {
  return derive_seed(config.seed, stage);
}

IngestResult cmd_ingest(const PipelineConfig& config, std::ostream& log) {
  if (!config.corpus) throw Error(Errc::kConfig, "ingest needs --corpus");
  const Corpus corpus = load_corpus(*config.corpus);
  const Vectorizer vectorizer = build_vectorizer(corpus, config.vectorizer);
  ensure_dir(config.out);
  {
    std::ofstream out(config.out / "corpus.jsonl", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::kIoError, "cannot write " + (config.out / "corpus.jsonl").string());
    write_corpus(out, corpus);
  }
  write_file(config.out / "vectorizer.json", vectorizer.to_json().dump() + "\n");
  log << "ingested " << corpus.size() << " pairs, vocabulary " << vectorizer.size() << " terms\n";
  return {corpus.size(), vectorizer.size()};
}

PoolQuestion build_stimuli(const QuestionSpec& q, const StimulusContext& ctx) {
  const Palette palette = ctx.palette ? *ctx.palette : Palette::defaults();
  PoolQuestion p;
  p.label = q.label();
  p.pair_id = q.pair_id;
  p.summary_id = q.summary.id();
  p.summary_text = q.summary.text();

  const HighlightSet plain_summary{Method::kShap, q.summary.id(), {}};
  for (Condition c : kAllConditions) {
    const auto method = method_for(c);
    if (method == Method::kCooccurrence || method == Method::kSemantic)
      p.summary_html[c] = render_html(q.summary, summary_channel_highlights(*method, q.summary), palette);
    else
      p.summary_html[c] = render_html(q.summary, plain_summary, palette);
  }

  for (std::size_t i = 0; i < kCandidates; ++i) {
    const Document& article = q.candidates[i];
    CandidateStimulus& cs = p.candidates[i];
    cs.document_id = article.id();

    HighlighterConfig shap_cfg = ctx.highlighter;
    shap_cfg.shap_seed = derive_seed(ctx.highlighter.shap_seed, q.id + "/" + std::to_string(i));
    const MaskedAffinity score(ctx.vectorizer, q.summary, article);
    const auto attributions = kernel_shap(std::cref(score), article, shap_cfg);
    cs.highlights[Method::kShap] = shap_highlights(article, attributions);
    cs.highlights[Method::kExtractiveSummary] =
        extractive_highlights(article, ctx.summarizer.select(article, ctx.highlighter.k));
    cs.highlights[Method::kCooccurrence] = cooccurrence_highlights(q.summary, article, ctx.highlighter);
    cs.highlights[Method::kSemantic] = semantic_highlights(q.summary, article, ctx.embedder, ctx.highlighter);

    for (Condition c : kAllConditions) {
      const auto method = method_for(c);
      cs.html[c] = method ? render_html(article, cs.highlights.at(*method), palette)
                          : render_html(article, HighlightSet{Method::kShap, article.id(), {}}, palette);
    }
  }
  return p;
}

nlohmann::ordered_json cmd_precompute(const PipelineConfig& config, std::ostream& log) {
  const IngestArtifacts art = read_ingest(config);
  const Corpus& corpus = art.corpus;
  if (corpus.size() < kCandidates)
    throw Error(Errc::kCorpusTooSmall, "need at least 3 pairs, have " + std::to_string(corpus.size()));

  std::optional<EmbeddingTable> table;
  if (config.embeddings) table = load_external_embeddings(*config.embeddings);
  const AffinityIndex index(corpus, art.vectorizer, table ? &*table : nullptr);
  const auto summarizer = make_summarizer(config);
  std::unique_ptr<SentenceEmbedder> embedder;
  if (table)
    embedder = std::make_unique<TableSentenceEmbedder>(*table);
  else
    embedder = std::make_unique<TfidfSentenceEmbedder>(art.vectorizer);
  std::optional<Palette> palette;
  if (config.palette) palette = Palette::load(*config.palette);

  QuestionOptions qopt;
  qopt.seed = stage_seed(config, "questions");
  qopt.ambiguity_threshold = config.ambiguity_threshold;

  // Questions, one per pair.
  std::vector<QuestionSpec> questions(corpus.size());
  parallel_for(corpus.size(), config.threads,
               [&](std::size_t i) { questions[i] = build_question(index, corpus.pairs()[i].id, qopt); });
  const double tau = resolve_tau(questions, config.difficulty);
  for (QuestionSpec& q : questions) q.difficulty = classify_difficulty(q.label(), tau);

  std::size_t curated_out = 0;
  if (config.difficulty.target_hard_model_accuracy) {
    std::vector<QuestionLabel> labels;
    for (const auto& q : questions) labels.push_back(q.label());
    const auto kept_ids =
        curate_hard_pool(labels, *config.difficulty.target_hard_model_accuracy, stage_seed(config, "curate"));
    const std::set<std::string> kept(kept_ids.begin(), kept_ids.end());
    const auto before = questions.size();
    std::erase_if(questions,
                  [&](const QuestionSpec& q) { return q.difficulty == Difficulty::kHard && !kept.count(q.id); });
    curated_out = before - questions.size();
  }

  // Tutorials: the clearest Easy question and a Hard one where the model is wrong.
  std::vector<QuestionSpec> extras;
  {
    const QuestionSpec* easy = nullptr;
    const QuestionSpec* hard = nullptr;
    for (const auto& q : questions) {
      if (q.ambiguous) continue;
      if (q.difficulty == Difficulty::kEasy) {
        if (!easy || score_gap(q.scores, q.truth_index) > score_gap(easy->scores, easy->truth_index)) easy = &q;
      } else if (!hard || (argmax_candidate(q.scores) != q.truth_index &&
                           argmax_candidate(hard->scores) == hard->truth_index)) {
        hard = &q;
      }
    }
    for (const QuestionSpec* t : {easy, hard}) {
      if (!t) continue;
      QuestionSpec tut = *t;
      tut.id = "tutorial-" + t->pair_id;
      tut.kind = QuestionKind::kTutorial;
      extras.push_back(std::move(tut));
    }
  }
  // Attention checks from seeded pairs.
  {
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(stage_seed(config, "attention"));
    rng.shuffle(order.begin(), order.end());
    const std::size_t n = std::min(config.attention_checks, corpus.size());
    for (std::size_t i = 0; i < n; ++i) extras.push_back(build_attention_check(index, corpus.pairs()[order[i]].id, qopt));
  }

  std::vector<const QuestionSpec*> all;
  for (const auto& q : extras) all.push_back(&q);
  for (const auto& q : questions) all.push_back(&q);

  HighlighterConfig hcfg = config.highlighter;
  hcfg.shap_seed = stage_seed(config, "shap");
  const StimulusContext ctx{art.vectorizer, *summarizer, *embedder, palette ? &*palette : nullptr, hcfg};
  std::vector<PoolQuestion> pool(all.size());
  std::atomic<std::size_t> done{0};
  parallel_for(all.size(), config.threads, [&](std::size_t i) {
    pool[i] = build_stimuli(*all[i], ctx);
    if (all[i]->kind == QuestionKind::kTutorial) pool[i].justification = tutorial_justification(*all[i]);
    ++done;
  });

  ensure_dir(config.out);
  const auto pool_path = config.pool.value_or(config.out / "pool.jsonl");
  {
    std::ofstream out(pool_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::kIoError, "cannot write " + pool_path.string());
    write_pool(out, pool);
  }

  // Manifest
  std::vector<QuestionLabel> labels;
  for (const auto& q : questions) labels.push_back(q.label());
  std::size_t easy = 0, hard = 0, ambiguous = 0;
  std::array<std::size_t, kCandidates> truth_positions{};
  for (const auto& l : labels) {
    (l.difficulty == Difficulty::kEasy ? easy : hard)++;
    ambiguous += l.ambiguous ? 1 : 0;
    ++truth_positions[l.truth_index];
  }
  auto accuracy = [&](DifficultyFilter f) -> nlohmann::ordered_json {
    try {
      return model_follower_accuracy(labels, f);
    } catch (const Error&) {
      return nullptr;
    }
  };
  nlohmann::ordered_json m;
  m["seed"] = config.seed;
  m["pairs"] = corpus.size();
  m["affinity"] = index.uses_external() ? "external" : "tfidf";
  m["tau"] = tau;
  m["tau_source"] = config.difficulty.tau ? "fixed" : "percentile";
  m["counts"] = {{"questions", labels.size()},
                 {"easy", easy},
                 {"hard", hard},
                 {"ambiguous", ambiguous},
                 {"curated_out", curated_out},
                 {"tutorials", std::count_if(extras.begin(), extras.end(),
                                             [](const auto& q) { return q.kind == QuestionKind::kTutorial; })},
                 {"attention_checks", std::count_if(extras.begin(), extras.end(), [](const auto& q) {
                    return q.kind == QuestionKind::kAttentionCheck;
                  })}};
  m["model_follower_accuracy"] = {{"easy", accuracy(DifficultyFilter::kEasy)},
                                  {"hard", accuracy(DifficultyFilter::kHard)},
                                  {"all", accuracy(DifficultyFilter::kAll)}};
  m["truth_positions"] = truth_positions;
  m["highlighter"] = {{"k", config.highlighter.k},
                      {"shap_samples", config.highlighter.shap_samples},
                      {"min_phrase_tokens", config.highlighter.min_phrase_tokens}};
  m["ambiguity_threshold"] = config.ambiguity_threshold;
  write_file(config.out / "manifest.json", m.dump(2) + "\n");
  log << "pool: " << labels.size() << " questions (" << easy << " Easy, " << hard << " Hard, " << ambiguous
      << " ambiguous), " << extras.size() << " fixtures, tau " << tau << "\n";
  return m;
}

StudyReport cmd_analyze(const PipelineConfig& config, std::ostream& log) {
  if (!config.responses) throw Error(Errc::kConfig, "analyze needs a responses file");
  const ResponseLog responses = load_responses(*config.responses);
  StatsConfig stats = config.stats;
  stats.seed = stage_seed(config, "analyze");
  const StudyReport report = aggregate_report(responses.responses, stats, responses.non_qualifying);
  ensure_dir(config.out);
  write_file(config.out / "report.json", to_json(report).dump(2) + "\n");
  const std::string table = report_table(report);
  write_file(config.out / "report.txt", table);
  std::ofstream csv(config.out / "participants.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw Error(Errc::kIoError, "cannot write participants.csv");
  write_participant_csv(csv, report);
  log << table;
  return report;
}

std::vector<PowerRow> cmd_power(const PipelineConfig& config, std::ostream& log) {
  if (config.power_grid.empty() || config.power_effects.empty())
    throw Error(Errc::kConfig, "power grid and effect sizes must be non-empty");
  std::vector<PowerRow> rows;
  char buf[128];
  const double alpha = config.power.alpha.value_or(sidak_alpha(config.stats.fwer, config.stats.comparisons));
  std::snprintf(buf, sizeof buf, "alpha %.6f, %zu simulations per cell\n", alpha, config.power.n_simulations);
  log << buf;
  std::snprintf(buf, sizeof buf, "%8s %8s %8s\n", "n", "d", "power");
  log << buf;
  for (double d : config.power_effects) {
    for (std::size_t n : config.power_grid) {
      PowerConfig p = config.power;
      p.n_per_group = n;
      p.effect_size_d = d;
      p.accuracy_delta.reset();
      p.alpha = alpha;
      p.threads = config.threads;
      if (config.pilot) p.pilot_path = config.pilot;
      // Common random numbers across the grid keep the curve smooth.
      p.seed = stage_seed(config, "power");
      const double power = power_analysis(p);
      rows.push_back({n, d, power});
      std::snprintf(buf, sizeof buf, "%8zu %8.2f %8.4f\n", n, d, power);
      log << buf;
    }
  }
  ensure_dir(config.out);
  std::string csv = "n_per_group,effect_size_d,power,alpha\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.4f,%.6f,%.6f\n", r.n_per_group, r.effect_size_d, r.power, alpha);
    csv += buf;
  }
  write_file(config.out / "power.csv", csv);
  return rows;
}

std::string cmd_render(const PipelineConfig& config, const std::string& pair_id, Method method,
                       const std::optional<std::string>& article_pair_id) {
  Corpus corpus;
  Vectorizer vectorizer;
  if (config.corpus) {
    corpus = load_corpus(*config.corpus);
    vectorizer = build_vectorizer(corpus, config.vectorizer);
  } else {
    auto art = read_ingest(config);
    corpus = std::move(art.corpus);
    vectorizer = std::move(art.vectorizer);
  }
  const CorpusPair* pair = corpus.find(pair_id);
  if (!pair) throw Error(Errc::kValidation, "no pair " + pair_id);
  const CorpusPair* target = article_pair_id ? corpus.find(*article_pair_id) : pair;
  if (!target) throw Error(Errc::kValidation, "no pair " + *article_pair_id);
  const Document& article = target->article;
  const Palette palette = config.palette ? Palette::load(*config.palette) : Palette::defaults();
  HighlighterConfig hcfg = config.highlighter;
  hcfg.shap_seed = stage_seed(config, "shap");

  HighlightSet set;
  switch (method) {
    case Method::kShap: {
      const MaskedAffinity score(vectorizer, pair->summary, article);
      set = shap_highlights(article, kernel_shap(std::cref(score), article, hcfg));
      break;
    }
    case Method::kExtractiveSummary:
      set = extractive_highlights(article, make_summarizer(config)->select(article, hcfg.k));
      break;
    case Method::kCooccurrence:
      set = cooccurrence_highlights(pair->summary, article, hcfg);
      break;
    case Method::kSemantic: {
      std::optional<EmbeddingTable> table;
      if (config.embeddings) table = load_external_embeddings(*config.embeddings);
      std::unique_ptr<SentenceEmbedder> embedder;
      if (table)
        embedder = std::make_unique<TableSentenceEmbedder>(*table);
      else
        embedder = std::make_unique<TfidfSentenceEmbedder>(vectorizer);
      set = semantic_highlights(pair->summary, article, *embedder, hcfg);
      break;
    }
  }
  return render_html(article, set, palette);
}

namespace {
std::atomic<HttpFrontend*> g_frontend{nullptr};
extern "C" void stop_on_signal(int) {
  if (HttpFrontend* f = g_frontend.load()) f->stop();
}
}  // namespace

void cmd_serve(const PipelineConfig& config, std::ostream& log) {
  ServiceConfig sc;
  sc.data_dir = config.data_dir.value_or(config.out / "study");
  sc.admin_token = config.admin_token;
  sc.grace_ms = config.grace_ms;
  sc.seed = stage_seed(config, "service");
  StudyService service(sc);
  const auto pool_path = config.pool.value_or(config.out / "pool.jsonl");
  service.load_pool(pool_path);
  HttpFrontend frontend(service, config.static_dir);
  const int port = frontend.bind(parse_bind(config.bind));
  const auto host = parse_bind(config.bind).host;
  log << "listening on " << host << ":" << port << std::endl;
  g_frontend = &frontend;
  std::signal(SIGINT, stop_on_signal);
  std::signal(SIGTERM, stop_on_signal);
  frontend.serve();
  g_frontend = nullptr;
}

}  // namespace docmatch
