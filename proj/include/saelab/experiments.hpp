#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "saelab/autointerp.hpp"
#include "saelab/buffer.hpp"
#include "saelab/glove.hpp"
#include "saelab/metrics.hpp"
#include "saelab/mlp.hpp"
#include "saelab/report.hpp"
#include "saelab/sae.hpp"
#include "saelab/svg.hpp"
#include "saelab/tokenizer.hpp"
#include "saelab/toygen.hpp"
#include "saelab/transformer.hpp"

namespace saelab {

// --- experiment kinds ---

enum class ExperimentKind { toy_sweep, glove_sweep, transformer_eval, autointerp, illustrative_lomax };

inline const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::toy_sweep: return "toy-sweep";
    case ExperimentKind::glove_sweep: return "glove-sweep";
    case ExperimentKind::transformer_eval: return "transformer-eval";
    case ExperimentKind::autointerp: return "autointerp";
    case ExperimentKind::illustrative_lomax: return "illustrative-lomax";
  }
  throw InvalidArgument("unknown experiment kind");
}

inline ExperimentKind kind_from_string(const std::string& s) {
  for (ExperimentKind k : {ExperimentKind::toy_sweep, ExperimentKind::glove_sweep,
                           ExperimentKind::transformer_eval, ExperimentKind::autointerp,
                           ExperimentKind::illustrative_lomax})
    if (s == kind_name(k)) return k;
  throw ParseError("unknown experiment kind: " + s);
}

inline GaussianMatching matching_from_string(const std::string& s) {
  if (s == "per_dimension") return GaussianMatching::per_dimension;
  if (s == "global") return GaussianMatching::global;
  throw ParseError("unknown gaussian matching mode: " + s);
}

// --- per-kind parameter blocks ---

struct ToySweepParams {
  int n_sparse = 512;
  int n_dense = 256;
  double decay = 0.99;
  double mean_active = 5.0;
  int n_samples = 10000;
  int n_latents = 0;  // 0: use n_sparse
  std::vector<float> l1_grid = {1e-3f, 1e-2f, 1e-1f, 1.0f, 10.0f, 100.0f};
  std::vector<std::string> conditions = {"superposed-in", "gaussian-in", "superposed-out",
                                         "gaussian-out"};
  int epochs = 100;
  int batch_size = 256;
  float learning_rate = 1e-3f;
  float val_fraction = 0.1f;
  std::string gaussian_matching = "per_dimension";

  nlohmann::json to_json() const {
    return {{"n_sparse", n_sparse},
            {"n_dense", n_dense},
            {"decay", decay},
            {"mean_active", mean_active},
            {"n_samples", n_samples},
            {"n_latents", n_latents},
            {"l1_grid", l1_grid},
            {"conditions", conditions},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"val_fraction", val_fraction},
            {"gaussian_matching", gaussian_matching}};
  }
  static ToySweepParams from_json(const nlohmann::json& j) {
    ToySweepParams p;
    p.n_sparse = j.value("n_sparse", p.n_sparse);
    p.n_dense = j.value("n_dense", p.n_dense);
    p.decay = j.value("decay", p.decay);
    p.mean_active = j.value("mean_active", p.mean_active);
    p.n_samples = j.value("n_samples", p.n_samples);
    p.n_latents = j.value("n_latents", p.n_latents);
    p.l1_grid = j.value("l1_grid", p.l1_grid);
    p.conditions = j.value("conditions", p.conditions);
    p.epochs = j.value("epochs", p.epochs);
    p.batch_size = j.value("batch_size", p.batch_size);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.val_fraction = j.value("val_fraction", p.val_fraction);
    p.gaussian_matching = j.value("gaussian_matching", p.gaussian_matching);
    return p;
  }
};

struct GloveSweepParams {
  std::string path;
  int max_words = 0;   // 0: all
  int n_latents = 0;   // 0: twice the embedding dimension
  std::vector<float> l1_grid = {1e-3f, 1e-2f, 1e-1f, 1.0f, 10.0f, 100.0f};
  std::vector<std::string> conditions = {"glove-in", "gaussian-in", "glove-out", "gaussian-out"};
  int epochs = 100;
  int batch_size = 256;
  float learning_rate = 1e-3f;
  float val_fraction = 0.1f;
  std::string gaussian_matching = "per_dimension";

  nlohmann::json to_json() const {
    return {{"path", path},
            {"max_words", max_words},
            {"n_latents", n_latents},
            {"l1_grid", l1_grid},
            {"conditions", conditions},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"val_fraction", val_fraction},
            {"gaussian_matching", gaussian_matching}};
  }
  static GloveSweepParams from_json(const nlohmann::json& j) {
    GloveSweepParams p;
    p.path = j.value("path", p.path);
    p.max_words = j.value("max_words", p.max_words);
    p.n_latents = j.value("n_latents", p.n_latents);
    p.l1_grid = j.value("l1_grid", p.l1_grid);
    p.conditions = j.value("conditions", p.conditions);
    p.epochs = j.value("epochs", p.epochs);
    p.batch_size = j.value("batch_size", p.batch_size);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.val_fraction = j.value("val_fraction", p.val_fraction);
    p.gaussian_matching = j.value("gaussian_matching", p.gaussian_matching);
    return p;
  }
};

struct TransformerEvalParams {
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int vocab_size = kByteVocab;
  int context_length = 64;
  std::vector<std::string> variants = {"step0", "rerand_incl_emb", "rerand_excl_emb", "control"};
  std::string checkpoint;    // SLCK1 path; enables the "loaded" variant and seeds rerandomization
  std::string corpus_path;   // empty: synthesize
  int synth_docs = 200;
  int synth_words = 600;
  uint64_t synth_seed = 0;
  std::vector<int> layers;   // empty: all
  int k = 16;
  int expansion = 16;        // latents = expansion * d_model
  int epochs = 10;
  int batch_size = 256;
  float learning_rate = 1e-3f;
  float val_fraction = 0.1f;
  size_t buffer_capacity = 100000;
  size_t max_rows = 200000;     // captured positions per layer
  size_t metric_rows = 50000;   // evaluation subset (codes for all rows would not fit)
  size_t dossier_rows = 100000; // positions scanned for dossiers
  int ce_sequences = 8;         // context windows for the CE ablation; 0 disables
  size_t n_latents_sampled = 100;
  size_t windows_per_latent = 20;
  size_t window = 32;

  nlohmann::json to_json() const {
    return {{"n_layers", n_layers},
            {"d_model", d_model},
            {"n_heads", n_heads},
            {"vocab_size", vocab_size},
            {"context_length", context_length},
            {"variants", variants},
            {"checkpoint", checkpoint},
            {"corpus_path", corpus_path},
            {"synth_docs", synth_docs},
            {"synth_words", synth_words},
            {"synth_seed", synth_seed},
            {"layers", layers},
            {"k", k},
            {"expansion", expansion},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"val_fraction", val_fraction},
            {"buffer_capacity", buffer_capacity},
            {"max_rows", max_rows},
            {"metric_rows", metric_rows},
            {"dossier_rows", dossier_rows},
            {"ce_sequences", ce_sequences},
            {"n_latents_sampled", n_latents_sampled},
            {"windows_per_latent", windows_per_latent},
            {"window", window}};
  }
  static TransformerEvalParams from_json(const nlohmann::json& j) {
    TransformerEvalParams p;
    p.n_layers = j.value("n_layers", p.n_layers);
    p.d_model = j.value("d_model", p.d_model);
    p.n_heads = j.value("n_heads", p.n_heads);
    p.vocab_size = j.value("vocab_size", p.vocab_size);
    p.context_length = j.value("context_length", p.context_length);
    p.variants = j.value("variants", p.variants);
    p.checkpoint = j.value("checkpoint", p.checkpoint);
    p.corpus_path = j.value("corpus_path", p.corpus_path);
    p.synth_docs = j.value("synth_docs", p.synth_docs);
    p.synth_words = j.value("synth_words", p.synth_words);
    p.synth_seed = j.value("synth_seed", p.synth_seed);
    p.layers = j.value("layers", p.layers);
    p.k = j.value("k", p.k);
    p.expansion = j.value("expansion", p.expansion);
    p.epochs = j.value("epochs", p.epochs);
    p.batch_size = j.value("batch_size", p.batch_size);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.val_fraction = j.value("val_fraction", p.val_fraction);
    p.buffer_capacity = j.value("buffer_capacity", p.buffer_capacity);
    p.max_rows = j.value("max_rows", p.max_rows);
    p.metric_rows = j.value("metric_rows", p.metric_rows);
    p.dossier_rows = j.value("dossier_rows", p.dossier_rows);
    p.ce_sequences = j.value("ce_sequences", p.ce_sequences);
    p.n_latents_sampled = j.value("n_latents_sampled", p.n_latents_sampled);
    p.windows_per_latent = j.value("windows_per_latent", p.windows_per_latent);
    p.window = j.value("window", p.window);
    return p;
  }
};

struct AutointerpParams {
  TransformerEvalParams model;  // net, corpus, and SAE-training settings
  size_t n_examples_explain = 20;
  size_t n_positive = 20;
  size_t n_negative = 20;
  std::string prompts_path;  // empty: built-in prompt set
  LlmEndpointConfig endpoint;
  bool use_mock = true;
  std::string mock_mode = "heuristic";  // heuristic | oracle | coinflip

  nlohmann::json to_json() const {
    return {{"model", model.to_json()},
            {"n_examples_explain", n_examples_explain},
            {"n_positive", n_positive},
            {"n_negative", n_negative},
            {"prompts_path", prompts_path},
            {"endpoint",
             {{"base_url", endpoint.base_url},
              {"model", endpoint.model},
              {"api_key_env", endpoint.api_key_env},
              {"timeout_seconds", endpoint.timeout_seconds},
              {"max_concurrent", endpoint.max_concurrent},
              {"temperature", endpoint.temperature}}},
            {"use_mock", use_mock},
            {"mock_mode", mock_mode}};
  }
  static AutointerpParams from_json(const nlohmann::json& j) {
    AutointerpParams p;
    if (j.contains("model")) p.model = TransformerEvalParams::from_json(j.at("model"));
    p.n_examples_explain = j.value("n_examples_explain", p.n_examples_explain);
    p.n_positive = j.value("n_positive", p.n_positive);
    p.n_negative = j.value("n_negative", p.n_negative);
    p.prompts_path = j.value("prompts_path", p.prompts_path);
    if (j.contains("endpoint")) {
      const auto& e = j.at("endpoint");
      p.endpoint.base_url = e.value("base_url", p.endpoint.base_url);
      p.endpoint.model = e.value("model", p.endpoint.model);
      p.endpoint.api_key_env = e.value("api_key_env", p.endpoint.api_key_env);
      p.endpoint.timeout_seconds = e.value("timeout_seconds", p.endpoint.timeout_seconds);
      p.endpoint.max_concurrent = e.value("max_concurrent", p.endpoint.max_concurrent);
      p.endpoint.temperature = e.value("temperature", p.endpoint.temperature);
    }
    p.use_mock = j.value("use_mock", p.use_mock);
    p.mock_mode = j.value("mock_mode", p.mock_mode);
    return p;
  }
};

struct LomaxRunParams {
  int n_samples = 10000;
  int n_sparse = 3;
  int n_dense = 2;
  double shape = 1.0;
  double scale = 1.0;
  double noise_std = 0.0;
  int max_plot_points = 2000;

  nlohmann::json to_json() const {
    return {{"n_samples", n_samples}, {"n_sparse", n_sparse}, {"n_dense", n_dense},
            {"shape", shape},         {"scale", scale},       {"noise_std", noise_std},
            {"max_plot_points", max_plot_points}};
  }
  static LomaxRunParams from_json(const nlohmann::json& j) {
    LomaxRunParams p;
    p.n_samples = j.value("n_samples", p.n_samples);
    p.n_sparse = j.value("n_sparse", p.n_sparse);
    p.n_dense = j.value("n_dense", p.n_dense);
    p.shape = j.value("shape", p.shape);
    p.scale = j.value("scale", p.scale);
    p.noise_std = j.value("noise_std", p.noise_std);
    p.max_plot_points = j.value("max_plot_points", p.max_plot_points);
    return p;
  }
};

// --- top-level configuration ---

struct ExperimentConfig {
  int config_version = 1;
  ExperimentKind kind = ExperimentKind::toy_sweep;
  std::vector<uint64_t> seeds = {0};
  std::string out_dir;
  int jobs = 1;
  ToySweepParams toy_sweep;
  GloveSweepParams glove_sweep;
  TransformerEvalParams transformer_eval;
  AutointerpParams autointerp;
  LomaxRunParams lomax;

  void validate() const {
    require(config_version == 1, "unsupported config_version");
    require(!seeds.empty(), "at least one seed required");
    require(jobs >= 1, "jobs must be positive");
  }

  // Every block is always emitted so a round-trip never loses settings.
  nlohmann::json to_json() const {
    return {{"config_version", config_version},
            {"kind", kind_name(kind)},
            {"seeds", seeds},
            {"out_dir", out_dir},
            {"jobs", jobs},
            {"toy_sweep", toy_sweep.to_json()},
            {"glove_sweep", glove_sweep.to_json()},
            {"transformer_eval", transformer_eval.to_json()},
            {"autointerp", autointerp.to_json()},
            {"lomax", lomax.to_json()}};
  }
  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.config_version = j.value("config_version", c.config_version);
    c.kind = kind_from_string(j.value("kind", std::string(kind_name(c.kind))));
    c.seeds = j.value("seeds", c.seeds);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("toy_sweep")) c.toy_sweep = ToySweepParams::from_json(j.at("toy_sweep"));
    if (j.contains("glove_sweep")) c.glove_sweep = GloveSweepParams::from_json(j.at("glove_sweep"));
    if (j.contains("transformer_eval"))
      c.transformer_eval = TransformerEvalParams::from_json(j.at("transformer_eval"));
    if (j.contains("autointerp")) c.autointerp = AutointerpParams::from_json(j.at("autointerp"));
    if (j.contains("lomax")) c.lomax = LomaxRunParams::from_json(j.at("lomax"));
    return c;
  }
};

inline void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path);
  out << config.to_json().dump(2) << '\n';
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ParseError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad config: ") + e.what());
  }
  ExperimentConfig c = ExperimentConfig::from_json(j);
  c.validate();
  return c;
}

// --- run results ---

struct RunSummary {
  std::vector<MetricsReport> reports;
  std::vector<nlohmann::json> records;  // experiment-specific lines (frontier, scores, kurtosis)
  int failures = 0;
  std::vector<std::string> files;
};

// Tasks are indexed up front and results land in preallocated slots, so the
// thread count never changes what gets written.
template <class Fn>
inline void parallel_for(size_t n, int jobs, Fn fn) {
  const size_t workers = std::min<size_t>(static_cast<size_t>(std::max(1, jobs)), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

namespace detail {

inline std::pair<double, double> mean_se(const std::vector<double>& xs) {
  const size_t n = xs.size();
  require(n > 0, "mean of nothing");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  if (n == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n))};
}

}  // namespace detail

// --- L1 sweeps (toy data and word vectors) ---

namespace detail {

struct SweepCase {
  std::string condition;
  float l1_coef = 0.0f;
  uint64_t seed = 0;
};

struct SweepTrainSettings {
  int n_latents = 0;
  int epochs = 100;
  int batch_size = 256;
  float learning_rate = 1e-3f;
  float val_fraction = 0.1f;
};

struct SweepOutcome {
  std::optional<MetricsReport> report;
  std::string error;
};

// Builds the dataset for one (condition, seed) cell; returns the ground-truth
// basis when one exists so MMCS can be reported.
using SweepDataBuilder =
    std::function<std::pair<ActivationDataset, std::optional<GroundTruthBasis>>(
        const std::string& condition, uint64_t seed)>;

inline SweepOutcome run_sweep_case(const SweepCase& c, const SweepDataBuilder& build,
                                   const SweepTrainSettings& ts) {
  SweepOutcome out;
  try {
    auto [data, basis] = build(c.condition, c.seed);
    const int d_in = static_cast<int>(data.n_dense());
    StandardSae sae = init_standard(d_in, ts.n_latents, c.seed);
    TrainConfig tc;
    tc.epochs = ts.epochs;
    tc.batch_size = ts.batch_size;
    tc.learning_rate = ts.learning_rate;
    tc.l1_coef = c.l1_coef;
    tc.val_fraction = ts.val_fraction;
    tc.seed = c.seed;
    auto [trained, train_report] = train(sae, data, tc);

    const Mat z = encode_standard(trained, data.rows);
    const Mat xhat = decode_standard(trained, z);
    MetricsReport r;
    r.explained_variance = explained_variance(data.rows, xhat);
    r.cosine_sim = mean_cosine_sim(data.rows, xhat);
    const SparsityStats ss = sparsity_measures(z);
    r.mean_l0 = ss.mean_l0;
    r.mean_l1 = ss.mean_l1;
    r.mean_l1_over_sqrt_l2 = ss.mean_l1_over_sqrt_l2;
    r.mean_hoyer = ss.mean_hoyer;
    if (basis) r.mmcs = mmcs(trained.w_dec, *basis);
    r.l1_coef = c.l1_coef;
    r.seed = c.seed;
    r.variant = c.condition;
    out.report = std::move(r);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

struct FrontierRecord {
  std::string condition;
  float l1_coef = 0.0f;
  double sparsity_mean = 0.0, sparsity_se = 0.0;
  double ev_mean = 0.0, ev_se = 0.0;
  int n_seeds = 0;
  bool on_frontier = false;

  nlohmann::json to_json() const {
    return {{"condition", condition},       {"l1_coef", l1_coef},
            {"sparsity_mean", sparsity_mean}, {"sparsity_se", sparsity_se},
            {"ev_mean", ev_mean},           {"ev_se", ev_se},
            {"n_seeds", n_seeds},           {"on_frontier", on_frontier}};
  }
  static FrontierRecord from_json(const nlohmann::json& j) {
    FrontierRecord r;
    r.condition = j.at("condition").get<std::string>();
    r.l1_coef = j.at("l1_coef").get<float>();
    r.sparsity_mean = j.at("sparsity_mean").get<double>();
    r.sparsity_se = j.at("sparsity_se").get<double>();
    r.ev_mean = j.at("ev_mean").get<double>();
    r.ev_se = j.at("ev_se").get<double>();
    r.n_seeds = j.at("n_seeds").get<int>();
    r.on_frontier = j.at("on_frontier").get<bool>();
    return r;
  }
};

// Seed-averaged (sparsity, EV) per grid point, with the Pareto-optimal subset
// flagged per condition.
inline std::vector<FrontierRecord> seed_averaged_frontier(
    const std::vector<MetricsReport>& reports, const std::vector<std::string>& conditions,
    const std::vector<float>& grid) {
  std::vector<FrontierRecord> records;
  for (const std::string& condition : conditions) {
    std::vector<ParetoPoint> averaged;
    std::vector<size_t> record_of_point;
    for (const float l1 : grid) {
      std::vector<double> sp, ev;
      for (const MetricsReport& r : reports)
        if (r.variant == condition && r.l1_coef && *r.l1_coef == l1) {
          sp.push_back(r.mean_l1_over_sqrt_l2);
          ev.push_back(r.explained_variance);
        }
      if (sp.empty()) continue;
      FrontierRecord rec;
      rec.condition = condition;
      rec.l1_coef = l1;
      std::tie(rec.sparsity_mean, rec.sparsity_se) = mean_se(sp);
      std::tie(rec.ev_mean, rec.ev_se) = mean_se(ev);
      rec.n_seeds = static_cast<int>(sp.size());
      record_of_point.push_back(records.size());
      averaged.push_back({rec.sparsity_mean, rec.ev_mean, std::to_string(record_of_point.size())});
      records.push_back(rec);
    }
    const auto frontier = pareto_frontier(averaged, FrontierOrientation::min_sparsity_max_value);
    for (const ParetoPoint& p : frontier) {
      const size_t point_idx = static_cast<size_t>(std::stoul(p.run_id)) - 1;
      records[record_of_point[point_idx]].on_frontier = true;
    }
  }
  return records;
}

inline Panel frontier_panel(const std::vector<FrontierRecord>& records,
                            const std::vector<std::string>& conditions, const std::string& title) {
  Panel panel;
  panel.title = title;
  panel.x_label = "mean L1/sqrt(L2)";
  panel.y_label = "explained variance";
  for (const std::string& condition : conditions) {
    Series s;
    s.label = condition;
    std::vector<const FrontierRecord*> pts;
    for (const FrontierRecord& r : records)
      if (r.condition == condition && r.on_frontier) pts.push_back(&r);
    std::sort(pts.begin(), pts.end(), [](const FrontierRecord* a, const FrontierRecord* b) {
      return a->sparsity_mean < b->sparsity_mean;
    });
    for (const FrontierRecord* r : pts) {
      s.x.push_back(r->sparsity_mean);
      s.y.push_back(r->ev_mean);
      s.y_err.push_back(r->ev_se);
    }
    if (!s.x.empty()) panel.series.push_back(std::move(s));
  }
  return panel;
}

inline RunSummary run_sweep(const ExperimentConfig& config, const SweepDataBuilder& build,
                            const SweepTrainSettings& ts,
                            const std::vector<std::string>& conditions,
                            const std::vector<float>& grid, const std::string& plot_title) {
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);

  std::vector<SweepCase> cases;
  for (const std::string& condition : conditions)
    for (const float l1 : grid)
      for (const uint64_t seed : config.seeds) cases.push_back({condition, l1, seed});

  std::vector<SweepOutcome> outcomes(cases.size());
  parallel_for(cases.size(), config.jobs,
               [&](size_t i) { outcomes[i] = run_sweep_case(cases[i], build, ts); });

  RunSummary summary;
  const std::string reports_path = config.out_dir + "/reports.jsonl";
  const std::string errors_path = config.out_dir + "/errors.jsonl";
  for (size_t i = 0; i < cases.size(); ++i) {
    if (outcomes[i].report) {
      summary.reports.push_back(*outcomes[i].report);
      append_jsonl(reports_path, outcomes[i].report->to_json());
    } else {
      ++summary.failures;
      append_jsonl(errors_path, {{"condition", cases[i].condition},
                                 {"l1_coef", cases[i].l1_coef},
                                 {"seed", cases[i].seed},
                                 {"error", outcomes[i].error}});
    }
  }
  if (!summary.reports.empty()) {
    save_metrics_csv(config.out_dir + "/reports.csv", summary.reports);
    summary.files.push_back(config.out_dir + "/reports.csv");
    summary.files.push_back(reports_path);

    const auto frontier = seed_averaged_frontier(summary.reports, conditions, grid);
    const std::string frontier_path = config.out_dir + "/frontier.jsonl";
    for (const FrontierRecord& r : frontier) {
      summary.records.push_back(r.to_json());
      append_jsonl(frontier_path, r.to_json());
    }
    summary.files.push_back(frontier_path);

    const Panel panel = frontier_panel(frontier, conditions, plot_title);
    if (!panel.series.empty()) {
      save_svg(config.out_dir + "/pareto.svg", render_svg(panel));
      summary.files.push_back(config.out_dir + "/pareto.svg");
    }
  }
  if (summary.failures > 0) summary.files.push_back(errors_path);
  return summary;
}

}  // namespace detail

inline RunSummary run_toy_sweep(const ExperimentConfig& config) {
  const ToySweepParams& p = config.toy_sweep;
  require(p.n_sparse >= 1 && p.n_dense >= 1 && p.n_samples >= 1, "bad toy sweep sizes");
  require(!p.l1_grid.empty() && !p.conditions.empty(), "empty sweep grid");
  const GaussianMatching matching = matching_from_string(p.gaussian_matching);

  detail::SweepDataBuilder build = [&p, matching](const std::string& condition, uint64_t seed)
      -> std::pair<ActivationDataset, std::optional<GroundTruthBasis>> {
    GroundTruthBasis basis = sample_ground_truth_features(p.n_sparse, p.n_dense, seed);
    Rng model_rng(seed, stream_id("sweep.model"));
    const CoefficientModel model =
        default_coefficient_model(p.n_sparse, model_rng, p.decay, p.mean_active);
    ActivationDataset data = generate_toy_dataset(basis, model, p.n_samples, seed);
    if (condition == "superposed-in") return {std::move(data), std::move(basis)};
    if (condition == "gaussian-in") {
      Rng rng(seed, stream_id("sweep.control.in"));
      return {gaussian_control(data, matching, rng), std::nullopt};
    }
    if (condition == "superposed-out")
      return {mlp_forward(init_mlp(p.n_dense, seed), data), std::nullopt};
    if (condition == "gaussian-out") {
      // The same Gaussian control as gaussian-in, pushed through the same MLP
      // as superposed-out: the -out pair compares the two base datasets after
      // an identical random nonlinear map.
      Rng rng(seed, stream_id("sweep.control.in"));
      return {mlp_forward(init_mlp(p.n_dense, seed), gaussian_control(data, matching, rng)),
              std::nullopt};
    }
    throw InvalidArgument("unknown sweep condition: " + condition);
  };

  detail::SweepTrainSettings ts;
  ts.n_latents = p.n_latents > 0 ? p.n_latents : p.n_sparse;
  ts.epochs = p.epochs;
  ts.batch_size = p.batch_size;
  ts.learning_rate = p.learning_rate;
  ts.val_fraction = p.val_fraction;
  return detail::run_sweep(config, build, ts, p.conditions, p.l1_grid, "sparsity frontier");
}

inline RunSummary run_glove_sweep(const ExperimentConfig& config) {
  const GloveSweepParams& p = config.glove_sweep;
  require(!p.path.empty(), "glove sweep needs a vector file path");
  require(!p.l1_grid.empty() && !p.conditions.empty(), "empty sweep grid");
  const GaussianMatching matching = matching_from_string(p.gaussian_matching);

  const WordVectorSet set = load_glove(p.path);
  ActivationDataset base = as_dataset(set);
  if (p.max_words > 0 && base.n_samples() > p.max_words) {
    base.rows.conservativeResize(p.max_words, Eigen::NoChange);
    base.token_ids.resize(static_cast<size_t>(p.max_words));
  }

  detail::SweepDataBuilder build = [&base, matching](const std::string& condition, uint64_t seed)
      -> std::pair<ActivationDataset, std::optional<GroundTruthBasis>> {
    const int dim = static_cast<int>(base.rows.cols());
    if (condition == "glove-in") return {base, std::nullopt};
    if (condition == "gaussian-in") {
      Rng rng(seed, stream_id("sweep.control.in"));
      return {gaussian_control(base, matching, rng), std::nullopt};
    }
    if (condition == "glove-out") return {mlp_forward(init_mlp(dim, seed), base), std::nullopt};
    if (condition == "gaussian-out") {
      Rng rng(seed, stream_id("sweep.control.in"));
      return {mlp_forward(init_mlp(dim, seed), gaussian_control(base, matching, rng)),
              std::nullopt};
    }
    throw InvalidArgument("unknown sweep condition: " + condition);
  };

  detail::SweepTrainSettings ts;
  ts.n_latents = p.n_latents > 0 ? p.n_latents : 2 * static_cast<int>(set.dim());
  ts.epochs = p.epochs;
  ts.batch_size = p.batch_size;
  ts.learning_rate = p.learning_rate;
  ts.val_fraction = p.val_fraction;
  return detail::run_sweep(config, build, ts, p.conditions, p.l1_grid, "word-vector frontier");
}

// --- transformer evaluation ---

namespace detail {

inline NetParams build_variant(const NetSpec& spec, const std::string& vname, uint64_t seed,
                               const std::optional<NetParams>& loaded) {
  if (vname == "loaded") {
    require(loaded.has_value(), "variant 'loaded' requires a checkpoint");
    NetParams p = *loaded;
    p.variant = NetVariant::loaded;
    return p;
  }
  if (vname == "step0") return init_step0(spec, seed);
  if (vname == "rerand_incl_emb" || vname == "rerand_excl_emb") {
    const NetParams reference = loaded ? *loaded : init_step0(spec, seed);
    return rerandomize(spec, reference, vname == "rerand_incl_emb", seed);
  }
  if (vname == "control") {
    NetParams p = loaded ? *loaded : init_step0(spec, seed);
    p.variant = NetVariant::control;
    p.control_seed = seed;
    return p;
  }
  throw InvalidArgument("unknown net variant: " + vname);
}

// Cuts the stream into context windows and captures every requested layer in a
// single pass, stopping once max_rows positions are collected per layer.
inline std::vector<ResidualCapture> capture_layers(const NetSpec& spec, const NetParams& params,
                                                   const TokenStream& stream,
                                                   const std::vector<int>& layers,
                                                   size_t max_rows) {
  require(!layers.empty(), "no layers requested");
  require(stream.desc.vocab_size <= spec.vocab_size, "stream vocabulary exceeds the net's");
  std::vector<ResidualCapture> out(layers.size());
  const size_t ctx = static_cast<size_t>(spec.context_length);
  const size_t n_tokens = stream.tokens.size();
  for (size_t start = 0, chunk = 0; start < n_tokens; start += ctx, ++chunk) {
    const size_t len = std::min(ctx, n_tokens - start);
    if (len < 2) break;
    const std::vector<uint32_t> window(stream.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                       stream.tokens.begin() +
                                           static_cast<std::ptrdiff_t>(start + len));
    const ForwardResult res = transformer_forward(spec, params, window, layers, chunk);
    for (size_t i = 0; i < layers.size(); ++i) out[i].append(res.captures[i]);
    if (static_cast<size_t>(out[0].data.n_samples()) >= max_rows) break;
  }
  require(out[0].data.n_samples() > 0, "corpus produced no capture rows");
  return out;
}

inline ResidualCapture capture_prefix(const ResidualCapture& cap, size_t n) {
  const size_t total = static_cast<size_t>(cap.data.n_samples());
  if (n >= total) return cap;
  ResidualCapture out;
  out.layer = cap.layer;
  out.data.rows = cap.data.rows.topRows(static_cast<Eigen::Index>(n));
  out.data.token_ids.assign(cap.data.token_ids.begin(),
                            cap.data.token_ids.begin() + static_cast<std::ptrdiff_t>(n));
  out.positions.assign(cap.positions.begin(), cap.positions.begin() + static_cast<std::ptrdiff_t>(n));
  out.seq_ids.assign(cap.seq_ids.begin(), cap.seq_ids.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

// Decorrelates captured rows through the shuffling buffer before training.
inline ActivationDataset buffered_rows(const ResidualCapture& cap, size_t capacity, int batch_size,
                                       uint64_t seed) {
  const Eigen::Index n = cap.data.n_samples();
  BufferConfig bc;
  bc.capacity = std::max<size_t>(std::min<size_t>(capacity, static_cast<size_t>(n)),
                                 static_cast<size_t>(batch_size));
  bc.batch_size = static_cast<size_t>(batch_size);
  bc.seed = seed;
  ActivationBuffer buffer(bc);
  const Eigen::Index chunk_rows = 4096;
  auto cursor = std::make_shared<Eigen::Index>(0);
  buffer.attach_source([&cap, cursor, chunk_rows]() -> ActivationDataset {
    const Eigen::Index n_total = cap.data.n_samples();
    if (*cursor >= n_total) return {};
    const Eigen::Index take = std::min(chunk_rows, n_total - *cursor);
    ActivationDataset chunk;
    chunk.rows = cap.data.rows.middleRows(*cursor, take);
    if (cap.data.has_token_ids())
      chunk.token_ids.assign(
          cap.data.token_ids.begin() + *cursor,
          cap.data.token_ids.begin() + *cursor + static_cast<std::ptrdiff_t>(take));
    *cursor += take;
    return chunk;
  });

  ActivationDataset out;
  out.rows.resize(n, cap.data.n_dense());
  out.token_ids.reserve(static_cast<size_t>(n));
  Eigen::Index filled = 0;
  while (auto batch = buffer.next_batch()) {
    const Eigen::Index b = batch->data.n_samples();
    out.rows.middleRows(filled, b) = batch->data.rows;
    out.token_ids.insert(out.token_ids.end(), batch->data.token_ids.begin(),
                         batch->data.token_ids.end());
    filled += b;
  }
  require(filled == n, "buffer drained fewer rows than captured");
  return out;
}

struct LayerSaeResult {
  TopKSae sae;
  TrainReport train_report;
  ActivationDataset train_rows;
};

inline LayerSaeResult train_layer_sae(const TransformerEvalParams& p, const ResidualCapture& cap,
                                      const std::string& vname, int layer, uint64_t seed) {
  const uint64_t sae_seed = stream_id("eval.sae", fnv1a64(vname), static_cast<uint64_t>(layer), seed);
  LayerSaeResult out;
  out.train_rows = buffered_rows(cap, p.buffer_capacity, p.batch_size,
                                 stream_id("eval.buffer", fnv1a64(vname),
                                           static_cast<uint64_t>(layer), seed));
  TopKSae sae = init_topk(p.d_model, p.expansion * p.d_model, p.k, sae_seed);
  TrainConfig tc;
  tc.epochs = p.epochs;
  tc.batch_size = p.batch_size;
  tc.learning_rate = p.learning_rate;
  tc.val_fraction = p.val_fraction;
  tc.seed = sae_seed;
  auto [trained, train_report] = train(sae, out.train_rows, tc);
  out.sae = std::move(trained);
  out.train_report = std::move(train_report);
  return out;
}

inline std::vector<TokenActivations> dossier_token_activations(const DossierSet& dossiers) {
  std::vector<TokenActivations> latents;
  for (const LatentDossier& d : dossiers.dossiers) {
    TokenActivations acts;
    for (const DossierExample& ex : d.examples)
      for (size_t i = 0; i < ex.tokens.size(); ++i) acts.emplace_back(ex.tokens[i], ex.activations[i]);
    latents.push_back(std::move(acts));
  }
  return latents;
}

inline TokenStream eval_corpus_stream(const TransformerEvalParams& p) {
  if (!p.corpus_path.empty()) return tokenize(load_corpus(p.corpus_path));
  return tokenize(synthesize_corpus(p.synth_docs, p.synth_words, p.synth_seed));
}

inline std::vector<int> eval_layers(const TransformerEvalParams& p) {
  if (!p.layers.empty()) {
    std::vector<int> layers = p.layers;
    std::sort(layers.begin(), layers.end());
    for (int l : layers) require(l >= 0 && l < p.n_layers, "layer index out of range");
    return layers;
  }
  std::vector<int> layers(static_cast<size_t>(p.n_layers));
  for (int l = 0; l < p.n_layers; ++l) layers[static_cast<size_t>(l)] = l;
  return layers;
}

// Same context windows for every variant so CE comparisons are paired.
inline std::vector<std::vector<uint32_t>> ce_windows(const TransformerEvalParams& p,
                                                     const TokenStream& stream, uint64_t seed) {
  std::vector<std::vector<uint32_t>> windows;
  const size_t ctx = static_cast<size_t>(p.context_length);
  for (size_t start = 0; start + 2 <= stream.tokens.size(); start += ctx) {
    const size_t len = std::min(ctx, stream.tokens.size() - start);
    if (len < 2) break;
    windows.emplace_back(stream.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                         stream.tokens.begin() + static_cast<std::ptrdiff_t>(start + len));
  }
  if (p.ce_sequences <= 0 || windows.size() <= static_cast<size_t>(p.ce_sequences)) return windows;
  Rng rng(seed, stream_id("eval.ce"));
  const auto order = shuffled_indices(windows.size(), rng);
  std::vector<size_t> chosen(order.begin(), order.begin() + p.ce_sequences);
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::vector<uint32_t>> out;
  out.reserve(chosen.size());
  for (size_t idx : chosen) out.push_back(std::move(windows[idx]));
  return out;
}

// Metric-by-layer panels, one curve per variant. Variants not present in the
// reports are skipped.
inline std::vector<Panel> metric_layer_panels(const std::vector<MetricsReport>& reports,
                                              const std::vector<std::string>& variants) {
  std::vector<Panel> panels;
  const std::vector<std::pair<std::string,
                              std::function<std::optional<double>(const MetricsReport&)>>>
      tracked = {{"explained variance",
                  [](const MetricsReport& r) { return std::optional<double>(r.explained_variance); }},
                 {"mean L0",
                  [](const MetricsReport& r) { return std::optional<double>(r.mean_l0); }},
                 {"token entropy", [](const MetricsReport& r) { return r.token_entropy; }},
                 {"CE loss score", [](const MetricsReport& r) { return r.ce_loss_score; }}};
  for (const auto& [name, pick] : tracked) {
    Panel panel;
    panel.title = name;
    panel.x_label = "layer";
    panel.y_label = name;
    for (const std::string& vname : variants) {
      Series s;
      s.label = vname;
      for (const MetricsReport& r : reports)
        if (r.variant == vname)
          if (const auto v = pick(r)) {
            s.x.push_back(static_cast<double>(r.layer));
            s.y.push_back(*v);
          }
      if (!s.x.empty()) panel.series.push_back(std::move(s));
    }
    if (!panel.series.empty()) panels.push_back(std::move(panel));
  }
  return panels;
}

// ROC panel rebuilt from pooled autointerp lines that carry curve points.
inline Panel roc_panel_from_records(const std::vector<nlohmann::json>& records) {
  Panel panel;
  panel.title = "fuzzing ROC";
  panel.x_label = "false positive rate";
  panel.y_label = "true positive rate";
  panel.diagonal = true;
  for (const nlohmann::json& rec : records) {
    if (!rec.contains("roc_points") || rec.at("roc_points").is_null()) continue;
    Series s;
    s.label = rec.value("variant", std::string("?")) + " L" +
              std::to_string(rec.value("layer", -1));
    for (const auto& pt : rec.at("roc_points")) {
      s.x.push_back(pt.at(0).get<double>());
      s.y.push_back(pt.at(1).get<double>());
    }
    if (!s.x.empty()) panel.series.push_back(std::move(s));
  }
  return panel;
}

// EV / cosine / sparsity on an evaluation subset; codes for the full capture
// would not fit in memory at desk scale.
inline void fill_reconstruction_metrics(MetricsReport& r, const TopKSae& sae,
                                        const ActivationDataset& rows, size_t metric_rows) {
  const Eigen::Index n = std::min<Eigen::Index>(rows.n_samples(),
                                                static_cast<Eigen::Index>(metric_rows));
  const Mat x = rows.rows.topRows(n);
  const Mat z = encode_topk(sae, x);
  const Mat xhat = decode_topk(sae, z);
  r.explained_variance = explained_variance(x, xhat);
  r.cosine_sim = mean_cosine_sim(x, xhat);
  const SparsityStats ss = sparsity_measures(z);
  r.mean_l0 = ss.mean_l0;
  r.mean_l1 = ss.mean_l1;
  r.mean_l1_over_sqrt_l2 = ss.mean_l1_over_sqrt_l2;
  r.mean_hoyer = ss.mean_hoyer;
}

}  // namespace detail

inline RunSummary run_transformer_eval(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const TransformerEvalParams& p = config.transformer_eval;
  fs::create_directories(config.out_dir);
  const NetSpec spec =
      make_net_spec(p.n_layers, p.d_model, p.n_heads, p.vocab_size, p.context_length);
  const TokenStream stream = detail::eval_corpus_stream(p);
  const std::vector<int> layers = detail::eval_layers(p);
  std::optional<NetParams> loaded;
  if (!p.checkpoint.empty()) {
    NetParams lp;
    lp.tensors = load_slck(p.checkpoint);
    lp.variant = NetVariant::loaded;
    validate_net_params(spec, lp);
    loaded = std::move(lp);
  }

  struct VariantTask {
    uint64_t seed;
    std::string variant;
  };
  std::vector<VariantTask> tasks;
  for (const uint64_t seed : config.seeds)
    for (const std::string& v : p.variants) tasks.push_back({seed, v});

  struct VariantOutcome {
    std::vector<MetricsReport> reports;
    std::string error;
  };
  std::vector<VariantOutcome> outcomes(tasks.size());

  parallel_for(tasks.size(), config.jobs, [&](size_t t) {
    VariantOutcome& res = outcomes[t];
    const auto& [seed, vname] = tasks[t];
    try {
      const NetParams params = detail::build_variant(spec, vname, seed, loaded);
      const auto captures = detail::capture_layers(spec, params, stream, layers, p.max_rows);
      const auto corpus = detail::ce_windows(p, stream, seed);
      for (size_t li = 0; li < layers.size(); ++li) {
        const int layer = layers[li];
        auto trained = detail::train_layer_sae(p, captures[li], vname, layer, seed);

        MetricsReport r;
        detail::fill_reconstruction_metrics(r, trained.sae, trained.train_rows, p.metric_rows);
        r.k = p.k;
        r.seed = seed;
        r.layer = layer;
        r.variant = vname;
        if (!corpus.empty()) {
          try {
            r.ce_loss_score = ce_loss_score(spec, params, trained.sae, layer, corpus);
          } catch (const DegenerateDenominator&) {
            // zero-ablation does not raise the loss on this net; no score
          }
        }
        const auto dossier_cap = detail::capture_prefix(captures[li], p.dossier_rows);
        const DossierSet dossiers =
            collect_dossiers(trained.sae, dossier_cap, p.n_latents_sampled, p.windows_per_latent,
                             p.window, seed);
        if (!dossiers.dossiers.empty()) {
          try {
            r.token_entropy = token_entropy(detail::dossier_token_activations(dossiers));
          } catch (const DegenerateDenominator&) {
          }
        }
        res.reports.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      res.error = e.what();
      res.reports.clear();
    }
  });

  RunSummary summary;
  const std::string reports_path = config.out_dir + "/reports.jsonl";
  const std::string errors_path = config.out_dir + "/errors.jsonl";
  for (size_t t = 0; t < tasks.size(); ++t) {
    if (!outcomes[t].error.empty()) {
      ++summary.failures;
      append_jsonl(errors_path, {{"variant", tasks[t].variant},
                                 {"seed", tasks[t].seed},
                                 {"error", outcomes[t].error}});
      continue;
    }
    for (MetricsReport& r : outcomes[t].reports) {
      append_jsonl(reports_path, r.to_json());
      summary.reports.push_back(std::move(r));
    }
  }
  if (!summary.reports.empty()) {
    save_metrics_csv(config.out_dir + "/reports.csv", summary.reports);
    summary.files.push_back(reports_path);
    summary.files.push_back(config.out_dir + "/reports.csv");

    const auto panels = detail::metric_layer_panels(summary.reports, p.variants);
    if (!panels.empty()) {
      save_svg(config.out_dir + "/metrics.svg", render_svg(panels));
      summary.files.push_back(config.out_dir + "/metrics.svg");
    }
  }
  if (summary.failures > 0) summary.files.push_back(errors_path);
  return summary;
}

// --- auto-interpretation scoring runs ---

// Answers fuzzing judgments from the ground-truth labels of the registered
// items; everything else falls through to the lexical heuristic. Upper anchor
// for the scoring pipeline.
class OracleMockClient : public LlmClient {
 public:
  explicit OracleMockClient(PromptSet prompts = default_prompt_set())
      : prompts_(std::move(prompts)), heuristic_(prompts_) {}

  void set_items(const std::vector<FuzzingItem>* items) { items_ = items; }

 private:
  std::string do_complete(const std::vector<ChatMessage>& messages) override {
    std::string system, user;
    for (const ChatMessage& m : messages) {
      if (m.role == "system") system = m.content;
      if (m.role == "user") user = m.content;
    }
    if (system == prompts_.fuzzing_system && items_ != nullptr) {
      // Longest matching text wins, so an item that happens to be a substring
      // of another item's rendering cannot steal the verdict.
      const FuzzingItem* best = nullptr;
      for (const FuzzingItem& item : *items_) {
        const std::string needle =
            prompts_.fuzzing_user_mid + item.text + prompts_.fuzzing_user_suffix;
        if (user.find(needle) != std::string::npos &&
            (best == nullptr || item.text.size() > best->text.size()))
          best = &item;
      }
      return best != nullptr && best->label ? "Yes" : "No";
    }
    return heuristic_.complete(messages);
  }

  PromptSet prompts_;
  MockLlmClient heuristic_;
  const std::vector<FuzzingItem>* items_ = nullptr;
};

// Judges every fuzzing item by a fair coin; lower anchor (AUROC ~ 0.5).
class CoinFlipLlmClient : public LlmClient {
 public:
  explicit CoinFlipLlmClient(uint64_t seed, PromptSet prompts = default_prompt_set())
      : rng_(seed, stream_id("autointerp.coinflip")), prompts_(std::move(prompts)) {}

 private:
  std::string do_complete(const std::vector<ChatMessage>& messages) override {
    for (const ChatMessage& m : messages)
      if (m.role == "system" && m.content == prompts_.fuzzing_system)
        return rng_.uniform() < 0.5 ? "Yes" : "No";
    return "No consistent pattern.";
  }

  Rng rng_;
  PromptSet prompts_;
};

namespace detail {

struct AutointerpClient {
  std::unique_ptr<LlmClient> client;
  OracleMockClient* oracle = nullptr;  // non-null in oracle mode
};

inline AutointerpClient make_autointerp_client(const AutointerpParams& p, uint64_t seed,
                                               const PromptSet& prompts) {
  AutointerpClient out;
  if (!p.use_mock) {
    p.endpoint.validate();
    out.client = std::make_unique<HttpLlmClient>(p.endpoint);
    return out;
  }
  if (p.mock_mode == "heuristic") {
    out.client = std::make_unique<MockLlmClient>(prompts);
  } else if (p.mock_mode == "oracle") {
    auto oracle = std::make_unique<OracleMockClient>(prompts);
    out.oracle = oracle.get();
    out.client = std::move(oracle);
  } else if (p.mock_mode == "coinflip") {
    out.client = std::make_unique<CoinFlipLlmClient>(seed, prompts);
  } else {
    throw InvalidArgument("unknown mock mode: " + p.mock_mode);
  }
  return out;
}

}  // namespace detail

inline RunSummary run_autointerp(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const AutointerpParams& ap = config.autointerp;
  const TransformerEvalParams& p = ap.model;
  fs::create_directories(config.out_dir);
  const PromptSet prompts =
      ap.prompts_path.empty() ? default_prompt_set() : load_prompt_set(ap.prompts_path);
  const NetSpec spec =
      make_net_spec(p.n_layers, p.d_model, p.n_heads, p.vocab_size, p.context_length);
  const TokenStream stream = detail::eval_corpus_stream(p);
  const std::vector<int> layers = detail::eval_layers(p);
  std::optional<NetParams> loaded;
  if (!p.checkpoint.empty()) {
    NetParams lp;
    lp.tensors = load_slck(p.checkpoint);
    lp.variant = NetVariant::loaded;
    validate_net_params(spec, lp);
    loaded = std::move(lp);
  }

  RunSummary summary;
  const std::string scores_path = config.out_dir + "/autointerp.jsonl";
  const std::string transcripts_path = config.out_dir + "/transcripts.jsonl";
  const std::string errors_path = config.out_dir + "/errors.jsonl";
  std::vector<double> grand_scores;
  std::vector<bool> grand_labels;
  Panel roc_panel;
  roc_panel.title = "fuzzing ROC";
  roc_panel.x_label = "false positive rate";
  roc_panel.y_label = "true positive rate";
  roc_panel.diagonal = true;

  for (const uint64_t seed : config.seeds) {
    for (const std::string& vname : p.variants) {
      try {
        const NetParams params = detail::build_variant(spec, vname, seed, loaded);
        const auto captures = detail::capture_layers(spec, params, stream, layers, p.max_rows);
        for (size_t li = 0; li < layers.size(); ++li) {
          const int layer = layers[li];
          auto trained = detail::train_layer_sae(p, captures[li], vname, layer, seed);
          const auto dossier_cap = detail::capture_prefix(captures[li], p.dossier_rows);
          const DossierSet dossiers =
              collect_dossiers(trained.sae, dossier_cap, p.n_latents_sampled,
                               p.windows_per_latent, p.window, seed);
          auto ac = detail::make_autointerp_client(ap, seed, prompts);
          const auto explanations =
              explain_dossiers(dossiers.dossiers, *ac.client, prompts, ap.n_examples_explain);

          std::vector<double> pooled_scores;
          std::vector<bool> pooled_labels;
          size_t explanation_failures = 0, scoring_failures = 0;
          for (size_t d = 0; d < dossiers.dossiers.size(); ++d) {
            const LatentDossier& dossier = dossiers.dossiers[d];
            if (!explanations[d]) {
              ++explanation_failures;
              continue;
            }
            nlohmann::json line{{"variant", vname},
                                {"layer", layer},
                                {"seed", seed},
                                {"latent", dossier.latent},
                                {"explanation", *explanations[d]}};
            try {
              const FuzzingSet items =
                  render_fuzzing_items(dossier, ap.n_positive, ap.n_negative, prompts, seed);
              if (ac.oracle) ac.oracle->set_items(&items.items);
              const FuzzingScore score =
                  score_fuzzing(items.items, *explanations[d], *ac.client, prompts);
              pooled_scores.insert(pooled_scores.end(), score.scores.begin(), score.scores.end());
              for (const bool b : score.labels) pooled_labels.push_back(b);
              line["n_items"] = items.items.size();
              line["dropped"] = score.dropped;
              line["auroc"] = score.roc.auroc;
            } catch (const std::exception& e) {
              ++scoring_failures;
              line["auroc"] = nullptr;
              line["error"] = e.what();
            }
            if (ac.oracle) ac.oracle->set_items(nullptr);
            append_jsonl(scores_path, line);
            summary.records.push_back(std::move(line));
          }

          nlohmann::json pooled{{"variant", vname},          {"layer", layer},
                                {"seed", seed},              {"pooled", true},
                                {"n_latents", dossiers.dossiers.size()},
                                {"alive", dossiers.alive},
                                {"explanation_failures", explanation_failures},
                                {"scoring_failures", scoring_failures},
                                {"n_items", pooled_scores.size()}};
          try {
            const RocResult roc = roc_auroc(pooled_scores, pooled_labels);
            pooled["auroc"] = roc.auroc;
            auto points = nlohmann::json::array();
            Series curve;
            curve.label = vname + " L" + std::to_string(layer);
            for (const RocPoint& pt : roc.points) {
              curve.x.push_back(pt.fpr);
              curve.y.push_back(pt.tpr);
              points.push_back({pt.fpr, pt.tpr});
            }
            pooled["roc_points"] = std::move(points);
            roc_panel.series.push_back(std::move(curve));
          } catch (const std::exception&) {
            pooled["auroc"] = nullptr;
          }
          grand_scores.insert(grand_scores.end(), pooled_scores.begin(), pooled_scores.end());
          for (const bool b : pooled_labels) grand_labels.push_back(b);
          append_jsonl(scores_path, pooled);
          summary.records.push_back(std::move(pooled));

          for (const LlmExchange& ex : ac.client->transcript())
            append_jsonl(transcripts_path, {{"variant", vname},
                                            {"layer", layer},
                                            {"seed", seed},
                                            {"request", ex.request},
                                            {"response", ex.response}});
        }
      } catch (const std::exception& e) {
        ++summary.failures;
        append_jsonl(errors_path, {{"variant", vname}, {"seed", seed}, {"error", e.what()}});
      }
    }
  }

  nlohmann::json grand{{"pooled", "all"}, {"n_items", grand_scores.size()}};
  try {
    grand["auroc"] = roc_auroc(grand_scores, grand_labels).auroc;
  } catch (const std::exception&) {
    grand["auroc"] = nullptr;
  }
  append_jsonl(scores_path, grand);
  summary.records.push_back(grand);
  summary.files.push_back(scores_path);
  summary.files.push_back(transcripts_path);
  if (!roc_panel.series.empty()) {
    save_svg(config.out_dir + "/roc.svg", render_svg(roc_panel));
    summary.files.push_back(config.out_dir + "/roc.svg");
  }
  if (summary.failures > 0) summary.files.push_back(errors_path);
  return summary;
}

// --- heavy-tailed recovery illustration ---

struct LomaxSummary {
  std::vector<double> kurtosis_inputs;     // per sparse input coordinate
  std::vector<double> kurtosis_recovered;  // per recovered coordinate
};

namespace detail {

inline std::vector<double> column_kurtosis(const MatD& m) {
  std::vector<double> out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).mean();
    double m2 = 0.0, m4 = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double d = m(r, c) - mean;
      m2 += d * d;
      m4 += d * d * d * d;
    }
    m2 /= static_cast<double>(m.rows());
    m4 /= static_cast<double>(m.rows());
    require(m2 > 0.0, "degenerate coordinate: zero variance");
    out.push_back(m4 / (m2 * m2));
  }
  return out;
}

inline Series scatter_series(const MatD& m, Eigen::Index cx, Eigen::Index cy, int max_points) {
  Series s;
  s.line = false;
  const Eigen::Index n = m.rows();
  const Eigen::Index stride =
      std::max<Eigen::Index>(1, (n + std::max(max_points, 1) - 1) / std::max(max_points, 1));
  for (Eigen::Index r = 0; r < n; r += stride) {
    s.x.push_back(m(r, cx));
    s.y.push_back(m(r, cy));
  }
  return s;
}

}  // namespace detail

inline RunSummary run_lomax_illustrative(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const LomaxRunParams& p = config.lomax;
  require(p.n_samples >= 2 && p.n_sparse >= 2 && p.n_dense >= 2, "run too small to plot");
  require(p.n_dense <= p.n_sparse, "projection must reduce dimension");
  fs::create_directories(config.out_dir);

  RunSummary summary;
  const std::string records_path = config.out_dir + "/lomax.jsonl";
  bool plotted = false;
  for (const uint64_t seed : config.seeds) {
    const LomaxParams lomax{p.shape, p.scale};
    Rng sample_rng(seed, stream_id("lomax.sample"));
    MatD x_sp(p.n_samples, p.n_sparse);
    for (Eigen::Index r = 0; r < x_sp.rows(); ++r)
      for (Eigen::Index c = 0; c < x_sp.cols(); ++c)
        x_sp(r, c) = lomax_icdf(lomax, sample_rng.uniform());

    ProjectionModel model;
    model.proj.resize(p.n_dense, p.n_sparse);
    Rng proj_rng(seed, stream_id("lomax.proj"));
    for (Eigen::Index r = 0; r < model.proj.rows(); ++r)
      for (Eigen::Index c = 0; c < model.proj.cols(); ++c) model.proj(r, c) = proj_rng.normal();
    model.noise_cov = p.noise_std > 0.0
                          ? MatD(p.noise_std * p.noise_std *
                                 MatD::Identity(p.n_dense, p.n_dense))
                          : MatD::Zero(p.n_dense, p.n_dense);

    Rng noise_rng(seed, stream_id("lomax.noise"));
    const MatD x_de = project_batch(x_sp, model, noise_rng);
    const MlpParams mlp = init_mlp(p.n_dense, seed);
    const Mat y = mlp_forward(mlp, Mat(x_de.cast<float>()));
    const MatD recovered = recover_batch(y.cast<double>(), model);

    LomaxSummary ls;
    ls.kurtosis_inputs = detail::column_kurtosis(x_sp);
    ls.kurtosis_recovered = detail::column_kurtosis(recovered);
    nlohmann::json line{{"seed", seed},
                        {"n_samples", p.n_samples},
                        {"kurtosis_inputs", ls.kurtosis_inputs},
                        {"kurtosis_recovered", ls.kurtosis_recovered}};
    append_jsonl(records_path, line);
    summary.records.push_back(std::move(line));

    if (!plotted) {
      const MatD y_d = y.cast<double>();
      std::vector<Panel> panels(4);
      panels[0].title = "sparse inputs (dims 0,1)";
      panels[0].series = {detail::scatter_series(x_sp, 0, 1, p.max_plot_points)};
      panels[1].title = "dense inputs";
      panels[1].series = {detail::scatter_series(x_de, 0, 1, p.max_plot_points)};
      panels[2].title = "mlp outputs";
      panels[2].series = {detail::scatter_series(y_d, 0, 1, p.max_plot_points)};
      panels[3].title = "outputs in the sparse basis (dims 0,1)";
      panels[3].series = {detail::scatter_series(recovered, 0, 1, p.max_plot_points)};
      for (Panel& panel : panels) {
        panel.x_label = "dim 0";
        panel.y_label = "dim 1";
      }
      save_svg(config.out_dir + "/lomax.svg", render_svg(panels));
      summary.files.push_back(config.out_dir + "/lomax.svg");
      plotted = true;
    }
  }
  summary.files.push_back(records_path);
  return summary;
}

// --- dispatch ---

inline RunSummary run_experiment(const ExperimentConfig& config) {
  config.validate();
  require(!config.out_dir.empty(), "output directory required");
  std::filesystem::create_directories(config.out_dir);
  save_config(config, config.out_dir + "/config.json");

  RunSummary summary;
  switch (config.kind) {
    case ExperimentKind::toy_sweep: summary = run_toy_sweep(config); break;
    case ExperimentKind::glove_sweep: summary = run_glove_sweep(config); break;
    case ExperimentKind::transformer_eval: summary = run_transformer_eval(config); break;
    case ExperimentKind::autointerp: summary = run_autointerp(config); break;
    case ExperimentKind::illustrative_lomax: summary = run_lomax_illustrative(config); break;
  }
  summary.files.push_back(config.out_dir + "/config.json");
  write_manifest(config.out_dir);
  summary.files.push_back(config.out_dir + "/manifest.json");
  return summary;
}

}  // namespace saelab
