#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "docmatch/affinity.hpp"
#include "docmatch/highlighters.hpp"
#include "docmatch/render.hpp"
#include "docmatch/stats.hpp"
#include "docmatch/studygen.hpp"

namespace docmatch {

struct PipelineConfig {
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> pool;
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> summarizer_file;
  std::optional<std::filesystem::path> palette;
  std::optional<std::filesystem::path> responses;
  std::optional<std::filesystem::path> pilot;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> static_dir;
  std::filesystem::path out = "out";

  std::uint64_t seed = 0;
  VectorizerConfig vectorizer;
  HighlighterConfig highlighter;
  DifficultyConfig difficulty;
  double ambiguity_threshold = 0.5;
  std::size_t attention_checks = 4;
  StatsConfig stats;
  PowerConfig power;
  std::vector<std::size_t> power_grid{10, 20, 30, 40, 55, 70, 85, 100};
  std::vector<double> power_effects{0.0, 0.2, 0.5, 0.8};

  std::string bind = "127.0.0.1:8080";
  std::string admin_token;
  std::int64_t grace_ms = 2000;
  unsigned threads = 0;
};

// JSON object whose keys mirror the CLI flags; unknown keys are a ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& value, PipelineConfig base = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {});

// Named sub-seeds of the root seed, one per stage.
std::uint64_t stage_seed(const PipelineConfig& config, std::string_view stage);

struct IngestResult {
  std::size_t pairs = 0;
  std::size_t vocabulary = 0;
};

// Writes <out>/corpus.jsonl and <out>/vectorizer.json.
IngestResult cmd_ingest(const PipelineConfig& config, std::ostream& log);

// Reads the ingest artifacts and writes <out>/pool.jsonl and <out>/manifest.json.
nlohmann::ordered_json cmd_precompute(const PipelineConfig& config, std::ostream& log);

// Writes <out>/report.json, <out>/report.txt and <out>/participants.csv.
StudyReport cmd_analyze(const PipelineConfig& config, std::ostream& log);

struct PowerRow {
  std::size_t n_per_group = 0;
  double effect_size_d = 0.0;
  double power = 0.0;
};

// Writes <out>/power.csv.
std::vector<PowerRow> cmd_power(const PipelineConfig& config, std::ostream& log);

// HTML for one article (default: the pair's own) under one method's highlights.
std::string cmd_render(const PipelineConfig& config, const std::string& pair_id, Method method,
                       const std::optional<std::string>& article_pair_id);

// Blocks serving HTTP until SIGINT or SIGTERM.
void cmd_serve(const PipelineConfig& config, std::ostream& log);

// Stimuli for one question: highlight sets per method and HTML per condition.
struct StimulusContext {
  const Vectorizer& vectorizer;
  const Summarizer& summarizer;
  const SentenceEmbedder& embedder;
  const Palette* palette = nullptr;
  HighlighterConfig highlighter;
};

PoolQuestion build_stimuli(const QuestionSpec& question, const StimulusContext& context);

}  // namespace docmatch
