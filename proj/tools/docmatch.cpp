#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "docmatch/error.hpp"
#include "docmatch/pipeline.hpp"

namespace {

struct Flags {
  std::string config, corpus, pool, embeddings, summarizer_file, palette, pilot, data_dir, static_dir, out, bind,
      admin_token, responses, pair, method = "Cooccurrence", article;
  std::uint64_t seed = 0;
  double tau = 0.0, target_hard = 0.0;
  std::size_t k = 0, shap_samples = 0, n_simulations = 0, n_permutations = 0, bootstrap_samples = 0;
  unsigned threads = 0;
  std::vector<std::size_t> n_grid;
  std::vector<double> effects;
};

// Flags given on the command line override the config file.
docmatch::PipelineConfig resolve(const CLI::App& app, const Flags& f) {
  docmatch::PipelineConfig c;
  auto given = [&app](const char* name) {
    for (const CLI::App* a = &app; a; a = a->get_parent())
      if (const auto* opt = a->get_option_no_throw(name); opt && opt->count() > 0) return true;
    return false;
  };
  if (given("--config")) c = docmatch::load_pipeline_config(f.config);
  if (given("--corpus")) c.corpus = f.corpus;
  if (given("--pool")) c.pool = f.pool;
  if (given("--embeddings")) c.embeddings = f.embeddings;
  if (given("--summarizer-file")) c.summarizer_file = f.summarizer_file;
  if (given("--palette")) c.palette = f.palette;
  if (given("--pilot")) c.pilot = f.pilot;
  if (given("--data-dir")) c.data_dir = f.data_dir;
  if (given("--static-dir")) c.static_dir = f.static_dir;
  if (given("--out")) c.out = f.out;
  if (given("--bind")) c.bind = f.bind;
  if (given("--admin-token")) c.admin_token = f.admin_token;
  if (given("--responses")) c.responses = f.responses;
  if (given("--seed")) c.seed = f.seed;
  if (given("--tau")) c.difficulty.tau = f.tau;
  if (given("--target-hard-accuracy")) c.difficulty.target_hard_model_accuracy = f.target_hard;
  if (given("--k")) c.highlighter.k = f.k;
  if (given("--shap-samples")) c.highlighter.shap_samples = f.shap_samples;
  if (given("--threads")) c.threads = f.threads;
  if (given("--n-simulations")) c.power.n_simulations = f.n_simulations;
  if (given("--n-permutations")) {
    c.stats.n_permutations = f.n_permutations;
    c.power.n_permutations = f.n_permutations;
  }
  if (given("--bootstrap-samples")) c.stats.bootstrap_samples = f.bootstrap_samples;
  if (given("--n-grid")) c.power_grid = f.n_grid;
  if (given("--effects")) c.power_effects = f.effects;
  if (c.pilot) c.power.mode = docmatch::PowerMode::kEmpirical;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"docmatch: affinity scores, highlights and a timed matching study"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config, "JSON config; flags override it");
  app.add_option("--corpus", f.corpus, "Corpus JSONL {id, article, summary}");
  app.add_option("--pool", f.pool, "Question pool JSONL");
  app.add_option("--embeddings", f.embeddings, "Precomputed embeddings JSONL {id, vector}");
  app.add_option("--summarizer-file", f.summarizer_file, "Precomputed extractive selections JSONL");
  app.add_option("--palette", f.palette, "Highlight palette JSON");
  app.add_option("--seed", f.seed, "Root seed");
  app.add_option("--tau", f.tau, "Easy/Hard affinity gap threshold");
  app.add_option("--target-hard-accuracy", f.target_hard, "Curate the Hard pool to this model-follower accuracy");
  app.add_option("--k", f.k, "Sentences per summary sentence / extractive summary length");
  app.add_option("--shap-samples", f.shap_samples, "Kernel SHAP coalition budget (0: 2n+2048)");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--threads", f.threads, "Worker threads (0: all cores)");
  app.fallthrough();

  auto* ingest = app.add_subcommand("ingest", "Load the corpus and build the vectorizer");
  auto* precompute = app.add_subcommand("precompute", "Generate questions and precompute every stimulus");

  auto* serve = app.add_subcommand("serve", "Run the study HTTP service");
  serve->add_option("--bind", f.bind, "host:port (port 0 picks a free one)");
  serve->add_option("--admin-token", f.admin_token, "Token for GET /admin/export");
  serve->add_option("--data-dir", f.data_dir, "Directory for the append-only logs");
  serve->add_option("--static-dir", f.static_dir, "Serve static files from this directory");

  auto* analyze = app.add_subcommand("analyze", "Aggregate exported responses into a report");
  analyze->add_option("responses,--responses", f.responses, "Responses or export JSONL");
  analyze->add_option("--n-permutations", f.n_permutations, "Monte Carlo permutations per test");
  analyze->add_option("--bootstrap-samples", f.bootstrap_samples, "Bootstrap resamples per interval");

  auto* power = app.add_subcommand("power", "Monte Carlo power over a grid of group sizes");
  power->add_option("--n-grid", f.n_grid, "Participants per group")->delimiter(',');
  power->add_option("--effects", f.effects, "Cohen's d values")->delimiter(',');
  power->add_option("--n-simulations", f.n_simulations, "Simulated experiments per cell");
  power->add_option("--n-permutations", f.n_permutations, "Permutations per simulated test");
  power->add_option("--pilot", f.pilot, "Pilot accuracies, one per line (empirical mode)");

  auto* render = app.add_subcommand("render", "Render one article's highlights as HTML");
  render->add_option("--pair", f.pair, "Pair whose summary is the query")->required();
  render->add_option("--method", f.method, "Shap, ExtractiveSummary, Cooccurrence or Semantic");
  render->add_option("--article", f.article, "Pair whose article to render (default: --pair)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: ConfigError: " << e.what() << "\n";
    return 2;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const docmatch::PipelineConfig config = resolve(*sub, f);
    if (sub == ingest) {
      docmatch::cmd_ingest(config, std::cout);
    } else if (sub == precompute) {
      docmatch::cmd_precompute(config, std::cout);
    } else if (sub == serve) {
      docmatch::cmd_serve(config, std::cout);
    } else if (sub == analyze) {
      docmatch::cmd_analyze(config, std::cout);
    } else if (sub == power) {
      docmatch::cmd_power(config, std::cout);
    } else if (sub == render) {
      const auto method = docmatch::parse_method(f.method);
      if (!method) throw docmatch::Error(docmatch::Errc::kConfig, "unknown method '" + f.method + "'");
      const std::optional<std::string> article = f.article.empty() ? std::nullopt : std::optional(f.article);
      std::cout << docmatch::cmd_render(config, f.pair, *method, article) << "\n";
    }
  } catch (const docmatch::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
