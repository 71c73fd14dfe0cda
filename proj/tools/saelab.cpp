// Command-line front end: configured experiment runs, one-off dataset and SAE
// jobs, and plot regeneration from report files.

#include "saelab/experiments.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace saelab;

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<uint64_t> seeds;
  std::string out;
  int jobs = 0;
  bool mock_llm = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_mock = false) {
  cmd->add_option("--config", f.config_path, "experiment configuration file (JSON)");
  cmd->add_option("--seed", f.seeds, "random seed; repeat the flag for several");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--jobs", f.jobs, "worker threads for independent runs");
  if (with_mock)
    cmd->add_flag("--mock-llm", f.mock_llm, "use the offline mock instead of an endpoint");
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig c = f.config_path.empty() ? ExperimentConfig{} : load_config(f.config_path);
  if (!f.seeds.empty()) c.seeds = f.seeds;
  if (!f.out.empty()) c.out_dir = f.out;
  if (f.jobs > 0) c.jobs = f.jobs;
  if (f.mock_llm) c.autointerp.use_mock = true;
  return c;
}

int finish(const RunSummary& summary, const std::string& out_dir) {
  std::printf("wrote %s: %zu report lines, %zu record lines, %d failed runs\n", out_dir.c_str(),
              summary.reports.size(), summary.records.size(), summary.failures);
  return summary.failures > 0 ? 1 : 0;
}

int cmd_gen_toy(const CommonFlags& f) {
  ExperimentConfig c = resolve_config(f);
  require(!c.out_dir.empty(), "gen-toy needs --out or out_dir in the config");
  const ToySweepParams& p = c.toy_sweep;
  fs::create_directories(c.out_dir);
  save_config(c, c.out_dir + "/config.json");
  for (const uint64_t seed : c.seeds) {
    const GroundTruthBasis basis = sample_ground_truth_features(p.n_sparse, p.n_dense, seed);
    Rng model_rng(seed, stream_id("sweep.model"));
    const CoefficientModel model =
        default_coefficient_model(p.n_sparse, model_rng, p.decay, p.mean_active);
    const ActivationDataset data = generate_toy_dataset(basis, model, p.n_samples, seed);
    const std::string tag = "toy_seed" + std::to_string(seed);
    save_slab(data, c.out_dir + "/" + tag + ".slab");
    TensorStore truth;
    truth.add("features", {static_cast<uint32_t>(basis.n_dense()),
                           static_cast<uint32_t>(basis.n_sparse())}) = basis.features;
    save_slck(truth, c.out_dir + "/" + tag + ".basis.slck");
    std::printf("%s: %d samples, %d dense dims, %d sparse features\n", tag.c_str(), p.n_samples,
                p.n_dense, p.n_sparse);
  }
  write_manifest(c.out_dir);
  return 0;
}

int cmd_train_sae(const CommonFlags& f, const std::string& data_path, const std::string& family,
                  float l1_coef, int k, int n_latents) {
  ExperimentConfig c = resolve_config(f);
  require(!c.out_dir.empty(), "train-sae needs --out or out_dir in the config");
  require(!data_path.empty(), "train-sae needs --data");
  const ToySweepParams& p = c.toy_sweep;
  fs::create_directories(c.out_dir);
  save_config(c, c.out_dir + "/config.json");

  const ActivationDataset data = load_slab(data_path);
  const int d_in = static_cast<int>(data.n_dense());
  const int latents = n_latents > 0 ? n_latents : 2 * d_in;
  std::vector<MetricsReport> reports;
  for (const uint64_t seed : c.seeds) {
    TrainConfig tc;
    tc.epochs = p.epochs;
    tc.batch_size = p.batch_size;
    tc.learning_rate = p.learning_rate;
    tc.val_fraction = p.val_fraction;
    tc.l1_coef = family == "standard" ? l1_coef : 0.0f;
    tc.seed = seed;
    SaeMeta meta;
    meta.family = family;
    meta.config = tc;
    meta.dataset_hash = to_hex(detail::hash_mat(data.rows, 0xcbf29ce484222325ull));
    const std::string path = c.out_dir + "/sae_seed" + std::to_string(seed) + ".slck";

    MetricsReport r;
    r.seed = seed;
    r.variant = family;
    if (family == "standard") {
      auto [sae, train_report] = train(init_standard(d_in, latents, seed), data, tc);
      const Mat z = encode_standard(sae, data.rows);
      const Mat xhat = decode_standard(sae, z);
      r.explained_variance = explained_variance(data.rows, xhat);
      r.cosine_sim = mean_cosine_sim(data.rows, xhat);
      const SparsityStats ss = sparsity_measures(z);
      r.mean_l0 = ss.mean_l0;
      r.mean_l1 = ss.mean_l1;
      r.mean_l1_over_sqrt_l2 = ss.mean_l1_over_sqrt_l2;
      r.mean_hoyer = ss.mean_hoyer;
      r.l1_coef = l1_coef;
      save_sae(sae, meta, path);
    } else if (family == "topk") {
      meta.k = k;
      auto [sae, train_report] = train(init_topk(d_in, latents, k, seed), data, tc);
      const Mat z = encode_topk(sae, data.rows);
      const Mat xhat = decode_topk(sae, z);
      r.explained_variance = explained_variance(data.rows, xhat);
      r.cosine_sim = mean_cosine_sim(data.rows, xhat);
      const SparsityStats ss = sparsity_measures(z);
      r.mean_l0 = ss.mean_l0;
      r.mean_l1 = ss.mean_l1;
      r.mean_l1_over_sqrt_l2 = ss.mean_l1_over_sqrt_l2;
      r.mean_hoyer = ss.mean_hoyer;
      r.k = k;
      save_sae(sae, meta, path);
    } else {
      throw InvalidArgument("unknown SAE family: " + family);
    }
    append_jsonl(c.out_dir + "/reports.jsonl", r.to_json());
    reports.push_back(std::move(r));
    std::printf("seed %llu: EV %.4f, mean L0 %.2f -> %s\n",
                static_cast<unsigned long long>(seed), reports.back().explained_variance,
                reports.back().mean_l0, path.c_str());
  }
  save_metrics_csv(c.out_dir + "/reports.csv", reports);
  write_manifest(c.out_dir);
  return 0;
}

int cmd_sweep(const CommonFlags& f) {
  const ExperimentConfig c = resolve_config(f);
  require(c.kind == ExperimentKind::toy_sweep || c.kind == ExperimentKind::glove_sweep ||
              c.kind == ExperimentKind::illustrative_lomax,
          "sweep runs toy-sweep, glove-sweep, or illustrative-lomax configs; use "
          "eval-transformer or autointerp for the other kinds");
  return finish(run_experiment(c), c.out_dir);
}

int cmd_eval_transformer(const CommonFlags& f) {
  ExperimentConfig c = resolve_config(f);
  c.kind = ExperimentKind::transformer_eval;
  return finish(run_experiment(c), c.out_dir);
}

int cmd_autointerp(const CommonFlags& f) {
  ExperimentConfig c = resolve_config(f);
  c.kind = ExperimentKind::autointerp;
  return finish(run_experiment(c), c.out_dir);
}

int cmd_plot(const CommonFlags& f, const std::string& kind,
             const std::vector<std::string>& inputs) {
  require(!f.out.empty(), "plot needs --out");
  fs::create_directories(f.out);
  if (kind == "pareto") {
    require(!inputs.empty(), "plot pareto needs frontier.jsonl inputs");
    std::vector<detail::FrontierRecord> records;
    std::vector<std::string> conditions;
    for (const std::string& path : inputs)
      for (const nlohmann::json& j : read_jsonl(path)) {
        auto rec = detail::FrontierRecord::from_json(j);
        if (std::find(conditions.begin(), conditions.end(), rec.condition) == conditions.end())
          conditions.push_back(rec.condition);
        records.push_back(std::move(rec));
      }
    require(!records.empty(), "no frontier records in the inputs");
    save_svg(f.out + "/pareto.svg",
             render_svg(detail::frontier_panel(records, conditions, "sparsity frontier")));
    std::printf("wrote %s/pareto.svg\n", f.out.c_str());
    return 0;
  }
  if (kind == "roc") {
    require(!inputs.empty(), "plot roc needs autointerp.jsonl inputs");
    std::vector<nlohmann::json> records;
    for (const std::string& path : inputs)
      for (nlohmann::json& j : read_jsonl(path)) records.push_back(std::move(j));
    const Panel panel = detail::roc_panel_from_records(records);
    require(!panel.series.empty(), "no pooled ROC curves in the inputs");
    save_svg(f.out + "/roc.svg", render_svg(panel));
    std::printf("wrote %s/roc.svg\n", f.out.c_str());
    return 0;
  }
  if (kind == "metric-by-layer") {
    require(!inputs.empty(), "plot metric-by-layer needs reports.jsonl inputs");
    std::vector<MetricsReport> reports;
    std::vector<std::string> variants;
    for (const std::string& path : inputs)
      for (MetricsReport& r : load_metrics_jsonl(path)) {
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
          variants.push_back(r.variant);
        reports.push_back(std::move(r));
      }
    const auto panels = detail::metric_layer_panels(reports, variants);
    require(!panels.empty(), "no plottable metrics in the inputs");
    save_svg(f.out + "/metrics.svg", render_svg(panels));
    std::printf("wrote %s/metrics.svg\n", f.out.c_str());
    return 0;
  }
  if (kind == "scatter-2d") {
    ExperimentConfig c = resolve_config(f);
    c.kind = ExperimentKind::illustrative_lomax;
    c.out_dir = f.out;
    return finish(run_experiment(c), c.out_dir);
  }
  throw InvalidArgument("unknown plot kind: " + kind);
}

int cmd_report(const std::vector<std::string>& dirs) {
  require(!dirs.empty(), "report needs at least one run directory");
  int bad = 0;
  for (const std::string& dir : dirs) {
    const std::string path = dir + "/reports.jsonl";
    std::vector<MetricsReport> reports;
    try {
      reports = load_metrics_jsonl(path);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s: %s\n", dir.c_str(), e.what());
      ++bad;
      continue;
    }
    save_metrics_csv(dir + "/reports.csv", reports);
    std::printf("%s: %zu report lines\n", dir.c_str(), reports.size());
    std::vector<std::string> variants;
    for (const MetricsReport& r : reports)
      if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
        variants.push_back(r.variant);
    for (const std::string& v : variants) {
      double ev = 0.0, l0 = 0.0;
      int n = 0;
      for (const MetricsReport& r : reports)
        if (r.variant == v) {
          ev += r.explained_variance;
          l0 += r.mean_l0;
          ++n;
        }
      std::printf("  %-20s n=%-4d mean EV %.4f  mean L0 %.2f\n", v.c_str(), n, ev / n, l0 / n);
    }
  }
  return bad > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-structure laboratory for randomly initialized networks"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, sweep_f, eval_f, auto_f, plot_f;
  std::string train_data, train_family = "standard", plot_kind;
  float train_l1 = 3e-3f;
  int train_k = 16, train_latents = 0;
  std::vector<std::string> plot_inputs, report_dirs;

  add_common(app.add_subcommand("gen-toy", "generate a toy dataset with ground-truth features"),
             gen_f);
  auto* train_cmd =
      app.add_subcommand("train-sae", "train one sparse autoencoder on a saved dataset");
  add_common(train_cmd, train_f);
  train_cmd->add_option("--data", train_data, "SLAB1 activation dataset")->required();
  train_cmd->add_option("--family", train_family, "standard | topk");
  train_cmd->add_option("--l1", train_l1, "L1 penalty coefficient (standard family)");
  train_cmd->add_option("--k", train_k, "active latents per sample (topk family)");
  train_cmd->add_option("--latents", train_latents, "dictionary size; 0 = twice the input dim");

  add_common(app.add_subcommand("sweep", "run a configured sweep or illustrative run"), sweep_f);
  add_common(app.add_subcommand("eval-transformer",
                                "train and score per-layer SAEs over net variants"),
             eval_f);
  add_common(app.add_subcommand("autointerp", "explanation + fuzzing scores for SAE latents"),
             auto_f, true);

  auto* plot_cmd = app.add_subcommand("plot", "render SVG plots from report files");
  add_common(plot_cmd, plot_f);
  plot_cmd->add_option("--kind", plot_kind, "pareto | roc | metric-by-layer | scatter-2d")
      ->required();
  plot_cmd->add_option("inputs", plot_inputs, "report files to plot");

  auto* report_cmd = app.add_subcommand("report", "summarize run directories");
  report_cmd->add_option("dirs", report_dirs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen-toy")) return cmd_gen_toy(gen_f);
    if (app.got_subcommand("train-sae"))
      return cmd_train_sae(train_f, train_data, train_family, train_l1, train_k, train_latents);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_f);
    if (app.got_subcommand("eval-transformer")) return cmd_eval_transformer(eval_f);
    if (app.got_subcommand("autointerp")) return cmd_autointerp(auto_f);
    if (app.got_subcommand("plot")) return cmd_plot(plot_f, plot_kind, plot_inputs);
    if (app.got_subcommand("report")) return cmd_report(report_dirs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
