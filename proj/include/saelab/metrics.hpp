#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "saelab/common.hpp"
#include "saelab/sae.hpp"
#include "saelab/toygen.hpp"
#include "saelab/transformer.hpp"

namespace saelab {

// Mean over ground-truth features of the best cosine match among learned
// decoder columns. Scalar accumulation in a fixed order keeps the value
// reproducible down to the last bit.
inline double mmcs(const Mat& learned_decoder, const GroundTruthBasis& ground_truth) {
  const Mat& truth = ground_truth.features;
  require(learned_decoder.rows() == truth.rows(), "decoder/ground-truth dimension mismatch");
  require(learned_decoder.cols() >= 1 && truth.cols() >= 1, "empty matrix");

  const auto norm_of = [](const Mat& m, Eigen::Index c) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      s += static_cast<double>(m(r, c)) * static_cast<double>(m(r, c));
    return std::sqrt(s);
  };
  std::vector<double> learned_norms(static_cast<size_t>(learned_decoder.cols()));
  bool any_valid = false;
  for (Eigen::Index c = 0; c < learned_decoder.cols(); ++c) {
    learned_norms[static_cast<size_t>(c)] = norm_of(learned_decoder, c);
    any_valid |= learned_norms[static_cast<size_t>(c)] > 0.0;
  }
  require(any_valid, "every learned decoder column has zero norm");

  double total = 0.0;
  for (Eigen::Index t = 0; t < truth.cols(); ++t) {
    const double tn = norm_of(truth, t);
    require(tn > 0.0, "zero-norm ground-truth feature");
    double best = std::numeric_limits<double>::lowest();
    for (Eigen::Index l = 0; l < learned_decoder.cols(); ++l) {
      if (learned_norms[static_cast<size_t>(l)] == 0.0) continue;  // dead latent
      double dot = 0.0;
      for (Eigen::Index r = 0; r < truth.rows(); ++r)
        dot += static_cast<double>(truth(r, t)) * static_cast<double>(learned_decoder(r, l));
      best = std::max(best, dot / (tn * learned_norms[static_cast<size_t>(l)]));
    }
    total += best;
  }
  return total / static_cast<double>(truth.cols());
}

// 1 minus the fraction of variance left unexplained, measured around the batch
// mean of the originals.
inline double explained_variance(const Mat& x, const Mat& xhat) {
  require(x.rows() == xhat.rows() && x.cols() == xhat.cols(), "shape mismatch");
  require(x.rows() >= 1, "empty batch");
  const MatD xd = x.cast<double>();
  const MatD rd = (xhat.cast<double>() - xd);
  const Eigen::RowVectorXd mean = xd.colwise().mean();
  const double denom = (xd.rowwise() - mean).squaredNorm();
  if (denom <= 0.0) throw DegenerateDenominator("zero-variance batch in explained_variance");
  return 1.0 - rd.squaredNorm() / denom;
}

// Mean per-vector cosine between originals and reconstructions. Rows where
// either side has zero norm carry no angle and are skipped; if every row is
// skipped the mean defaults to 0 (a collapsed SAE reconstructs nothing).
inline double mean_cosine_sim(const Mat& x, const Mat& xhat) {
  require(x.rows() == xhat.rows() && x.cols() == xhat.cols(), "shape mismatch");
  double total = 0.0;
  Eigen::Index counted = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double nx = x.row(r).cast<double>().norm();
    const double nh = xhat.row(r).cast<double>().norm();
    if (nx == 0.0 || nh == 0.0) continue;
    total += x.row(r).cast<double>().dot(xhat.row(r).cast<double>()) / (nx * nh);
    ++counted;
  }
  return counted > 0 ? total / static_cast<double>(counted) : 0.0;
}

struct SparsityStats {
  double mean_l0 = 0.0;
  double mean_l1 = 0.0;
  double mean_l1_over_sqrt_l2 = 0.0;
  double mean_hoyer = 0.0;
};

// Per-row sparsity measures averaged over the batch. L0 counts entries above
// kActiveThreshold; Hoyer is (sqrt(n) - L1/L2) / (sqrt(n) - 1). Exactly-zero
// rows have no L1/sqrt(L2) or Hoyer value and drop out of those two means;
// when every row is zero both default to 0.
inline SparsityStats sparsity_measures(const Mat& z) {
  require(z.cols() >= 2, "Hoyer sparseness needs at least two dimensions");
  SparsityStats out;
  if (z.rows() == 0) return out;
  const double sqrt_n = std::sqrt(static_cast<double>(z.cols()));
  double l0_sum = 0.0, l1_sum = 0.0, ratio_sum = 0.0, hoyer_sum = 0.0;
  Eigen::Index nonzero_rows = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double l1 = 0.0, l2sq = 0.0;
    Eigen::Index l0 = 0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const double v = std::abs(static_cast<double>(z(r, c)));
      l1 += v;
      l2sq += v * v;
      if (v > static_cast<double>(kActiveThreshold)) ++l0;
    }
    l0_sum += static_cast<double>(l0);
    l1_sum += l1;
    const double l2 = std::sqrt(l2sq);
    if (l2 > 0.0) {
      ratio_sum += l1 / std::sqrt(l2);
      hoyer_sum += (sqrt_n - l1 / l2) / (sqrt_n - 1.0);
      ++nonzero_rows;
    }
  }
  out.mean_l0 = l0_sum / static_cast<double>(z.rows());
  out.mean_l1 = l1_sum / static_cast<double>(z.rows());
  if (nonzero_rows > 0) {
    out.mean_l1_over_sqrt_l2 = ratio_sum / static_cast<double>(nonzero_rows);
    out.mean_hoyer = hoyer_sum / static_cast<double>(nonzero_rows);
  }
  return out;
}

// --- cross-entropy ablation score ---

struct CeAblation {
  double ce_orig = 0.0;
  double ce_recon = 0.0;
  double ce_zero = 0.0;
  double score = 0.0;  // (recon - orig) / (zero - orig); 0 = lossless
};

// Three forward passes per sequence: untouched, residual replaced by the
// reconstruction, residual zero-ablated. CE values are averaged over all
// predicted positions across the corpus before forming the ratio.
inline CeAblation ce_ablation(const NetSpec& spec, const NetParams& params, int layer,
                              const ResidualFn& recon,
                              const std::vector<std::vector<uint32_t>>& corpus) {
  require(!corpus.empty(), "empty corpus");
  double sum_orig = 0.0, sum_recon = 0.0, sum_zero = 0.0, weight = 0.0;
  for (size_t s = 0; s < corpus.size(); ++s) {
    const auto& tokens = corpus[s];
    require(tokens.size() >= 2, "corpus sequence shorter than two tokens");
    const double w = static_cast<double>(tokens.size() - 1);
    sum_orig += w * cross_entropy_nats(transformer_forward(spec, params, tokens, {}, s).logits,
                                       tokens);
    sum_recon += w * cross_entropy_nats(
                         substitute_residual(spec, params, tokens, layer,
                                             SubstitutionMode::reconstruction, recon, s),
                         tokens);
    sum_zero += w * cross_entropy_nats(substitute_residual(spec, params, tokens, layer,
                                                           SubstitutionMode::zero, {}, s),
                                       tokens);
    weight += w;
  }
  CeAblation out;
  out.ce_orig = sum_orig / weight;
  out.ce_recon = sum_recon / weight;
  out.ce_zero = sum_zero / weight;
  if (out.ce_zero <= out.ce_orig)
    throw DegenerateDenominator("zero-ablation does not raise the loss (ce_zero " +
                                std::to_string(out.ce_zero) + " <= ce_orig " +
                                std::to_string(out.ce_orig) + ")");
  out.score = (out.ce_recon - out.ce_orig) / (out.ce_zero - out.ce_orig);
  return out;
}

inline double ce_loss_score(const NetSpec& spec, const NetParams& params, const StandardSae& sae,
                            int layer, const std::vector<std::vector<uint32_t>>& corpus) {
  const ResidualFn fn = [&sae](const Mat& x) { return reconstruct(sae, x); };
  return ce_ablation(spec, params, layer, fn, corpus).score;
}

inline double ce_loss_score(const NetSpec& spec, const NetParams& params, const TopKSae& sae,
                            int layer, const std::vector<std::vector<uint32_t>>& corpus) {
  const ResidualFn fn = [&sae](const Mat& x) { return reconstruct(sae, x); };
  return ce_ablation(spec, params, layer, fn, corpus).score;
}

// --- token-activation entropy ---

// One latent's evidence: (token id, activation) pairs from its example set.
using TokenActivations = std::vector<std::pair<uint32_t, float>>;

// Entropy (nats) of how a latent's activation mass distributes over vocabulary
// items, averaged over latents. Latents with no positive mass are skipped.
inline double token_entropy(const std::vector<TokenActivations>& latents) {
  require(!latents.empty(), "no latents given");
  double total_entropy = 0.0;
  size_t counted = 0;
  for (const auto& latent : latents) {
    std::map<uint32_t, double> mass;  // ordered so accumulation is reproducible
    double total = 0.0;
    for (const auto& [token, act] : latent) {
      if (act <= 0.0f) continue;  // only positive activation carries attribution
      mass[token] += static_cast<double>(act);
      total += static_cast<double>(act);
    }
    if (total <= 0.0) continue;
    double h = 0.0;
    for (const auto& [token, m] : mass) {
      const double p = m / total;
      h -= p * std::log(p);
    }
    total_entropy += h;
    ++counted;
  }
  if (counted == 0)
    throw DegenerateDenominator("no latent has positive total activation");
  return total_entropy / static_cast<double>(counted);
}

// --- ROC / AUROC ---

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;
  double auroc = 0.0;
};

// Threshold sweep over unique scores, one ROC point per threshold. The area is
// accumulated in integers (twice the trapezoid sum), which makes it bit-equal
// to the pairwise concordance count with ties worth one half.
inline RocResult roc_auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  require(scores.size() == labels.size(), "scores/labels length mismatch");
  require(!scores.empty(), "empty input");
  uint64_t pos = 0, neg = 0;
  for (const bool l : labels) (l ? pos : neg)++;
  require(pos > 0 && neg > 0, "both classes must be present");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  RocResult out;
  out.points.push_back({0.0, 0.0});
  uint64_t tp = 0, fp = 0, area2 = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    uint64_t group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? group_pos : group_neg)++;
      ++j;
    }
    area2 += group_neg * (2 * tp + group_pos);
    tp += group_pos;
    fp += group_neg;
    out.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  out.auroc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos * neg));
  return out;
}

// --- Pareto frontier ---

struct ParetoPoint {
  double sparsity = 0.0;
  double explained_variance = 0.0;
  std::string run_id;
};

enum class FrontierOrientation { min_sparsity_max_value, min_sparsity_min_value };

// Non-dominated subset, sorted by sparsity. Points tied on both coordinates do
// not dominate each other and all survive.
inline std::vector<ParetoPoint> pareto_frontier(
    const std::vector<ParetoPoint>& points,
    FrontierOrientation orientation = FrontierOrientation::min_sparsity_max_value) {
  for (const auto& p : points)
    require(std::isfinite(p.sparsity) && std::isfinite(p.explained_variance),
            "non-finite frontier point");
  const double flip = orientation == FrontierOrientation::min_sparsity_max_value ? 1.0 : -1.0;
  std::vector<ParetoPoint> kept;
  for (const auto& p : points) {
    bool dominated = false;
    for (const auto& q : points) {
      const double pv = flip * p.explained_variance, qv = flip * q.explained_variance;
      if (q.sparsity <= p.sparsity && qv >= pv && (q.sparsity < p.sparsity || qv > pv)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) kept.push_back(p);
  }
  std::sort(kept.begin(), kept.end(), [&](const ParetoPoint& a, const ParetoPoint& b) {
    if (a.sparsity != b.sparsity) return a.sparsity < b.sparsity;
    if (a.explained_variance != b.explained_variance)
      return flip * a.explained_variance > flip * b.explained_variance;
    return a.run_id < b.run_id;
  });
  return kept;
}

// --- per-run metrics record ---

struct MetricsReport {
  double explained_variance = 0.0;
  double cosine_sim = 0.0;
  double mean_l0 = 0.0;
  double mean_l1 = 0.0;
  double mean_l1_over_sqrt_l2 = 0.0;
  double mean_hoyer = 0.0;
  std::optional<double> mmcs;
  std::optional<double> ce_loss_score;
  std::optional<double> token_entropy;
  std::optional<float> l1_coef;
  std::optional<int> k;
  uint64_t seed = 0;
  int layer = -1;  // -1: no transformer in the loop
  std::string variant;

  nlohmann::json to_json() const {
    nlohmann::json j{{"explained_variance", explained_variance},
                     {"cosine_sim", cosine_sim},
                     {"mean_l0", mean_l0},
                     {"mean_l1", mean_l1},
                     {"mean_l1_over_sqrt_l2", mean_l1_over_sqrt_l2},
                     {"mean_hoyer", mean_hoyer},
                     {"seed", seed},
                     {"layer", layer},
                     {"variant", variant}};
    j["mmcs"] = mmcs ? nlohmann::json(*mmcs) : nlohmann::json();
    j["ce_loss_score"] = ce_loss_score ? nlohmann::json(*ce_loss_score) : nlohmann::json();
    j["token_entropy"] = token_entropy ? nlohmann::json(*token_entropy) : nlohmann::json();
    j["l1_coef"] = l1_coef ? nlohmann::json(*l1_coef) : nlohmann::json();
    j["k"] = k ? nlohmann::json(*k) : nlohmann::json();
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.explained_variance = j.at("explained_variance").get<double>();
    r.cosine_sim = j.at("cosine_sim").get<double>();
    r.mean_l0 = j.at("mean_l0").get<double>();
    r.mean_l1 = j.at("mean_l1").get<double>();
    r.mean_l1_over_sqrt_l2 = j.at("mean_l1_over_sqrt_l2").get<double>();
    r.mean_hoyer = j.at("mean_hoyer").get<double>();
    if (!j.at("mmcs").is_null()) r.mmcs = j.at("mmcs").get<double>();
    if (!j.at("ce_loss_score").is_null()) r.ce_loss_score = j.at("ce_loss_score").get<double>();
    if (!j.at("token_entropy").is_null()) r.token_entropy = j.at("token_entropy").get<double>();
    if (!j.at("l1_coef").is_null()) r.l1_coef = j.at("l1_coef").get<float>();
    if (!j.at("k").is_null()) r.k = j.at("k").get<int>();
    r.seed = j.at("seed").get<uint64_t>();
    r.layer = j.at("layer").get<int>();
    r.variant = j.at("variant").get<std::string>();
    return r;
  }
};

inline std::string metrics_csv_header() {
  return "explained_variance,cosine_sim,mean_l0,mean_l1,mean_l1_over_sqrt_l2,mean_hoyer,"
         "mmcs,ce_loss_score,token_entropy,l1_coef,k,seed,layer,variant";
}

inline std::string metrics_csv_row(const MetricsReport& r) {
  char buf[64];
  std::string row;
  const auto num = [&](double v) {
    snprintf(buf, sizeof buf, "%.17g", v);
    row += buf;
    row += ',';
  };
  const auto opt = [&](const std::optional<double>& v) {
    if (v) num(*v);
    else row += ',';
  };
  num(r.explained_variance);
  num(r.cosine_sim);
  num(r.mean_l0);
  num(r.mean_l1);
  num(r.mean_l1_over_sqrt_l2);
  num(r.mean_hoyer);
  opt(r.mmcs);
  opt(r.ce_loss_score);
  opt(r.token_entropy);
  if (r.l1_coef) num(static_cast<double>(*r.l1_coef));
  else row += ',';
  if (r.k) {
    row += std::to_string(*r.k);
    row += ',';
  } else {
    row += ',';
  }
  row += std::to_string(r.seed);
  row += ',';
  row += std::to_string(r.layer);
  row += ',';
  row += r.variant;
  return row;
}

}  // namespace saelab
