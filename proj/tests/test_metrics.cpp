#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "saelab/metrics.hpp"

using namespace saelab;

namespace {

// Independent double-loop restatement of mean max cosine similarity, accumulating
// in the same natural order so agreement can be checked bit for bit.
double mmcs_oracle(const Mat& truth, const Mat& learned) {
  double total = 0.0;
  for (Eigen::Index t = 0; t < truth.cols(); ++t) {
    double tn = 0.0;
    for (Eigen::Index r = 0; r < truth.rows(); ++r)
      tn += static_cast<double>(truth(r, t)) * static_cast<double>(truth(r, t));
    tn = std::sqrt(tn);
    double best = std::numeric_limits<double>::lowest();
    for (Eigen::Index l = 0; l < learned.cols(); ++l) {
      double ln = 0.0, dot = 0.0;
      for (Eigen::Index r = 0; r < learned.rows(); ++r) {
        ln += static_cast<double>(learned(r, l)) * static_cast<double>(learned(r, l));
        dot += static_cast<double>(truth(r, t)) * static_cast<double>(learned(r, l));
      }
      ln = std::sqrt(ln);
      if (ln == 0.0) continue;
      best = std::max(best, dot / (tn * ln));
    }
    total += best;
  }
  return total / static_cast<double>(truth.cols());
}

double pairwise_auroc_oracle(const std::vector<double>& scores, const std::vector<bool>& labels) {
  double concordant = 0.0;
  uint64_t pos = 0, neg = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    ++pos;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) concordant += 1.0;
      else if (scores[i] == scores[j]) concordant += 0.5;
    }
  }
  for (const bool l : labels)
    if (!l) ++neg;
  return concordant / static_cast<double>(pos * neg);
}

GroundTruthBasis basis_from(const Mat& features) {
  GroundTruthBasis b;
  b.features = features;
  return b;
}

// Repetitive text on a net whose unembedding is tied to its embedding: the only
// configuration where an untrained net genuinely beats the uniform predictor,
// which the ablation denominator needs.
struct TiedNet {
  NetSpec spec;
  NetParams params;
  std::vector<std::vector<uint32_t>> corpus;
  std::vector<std::vector<uint32_t>> held_out;
};

const TiedNet& tied_net() {
  static const TiedNet net = [] {
    TiedNet n;
    n.spec = make_net_spec(2, 16, 4, 31, 64);
    n.params = init_step0(n.spec, 21);
    n.params.tensors.at("unembed") = 12.0f * n.params.tensors.at("embed").transpose();
    Rng rng(22, stream_id("test.corpus"));
    const auto draw_seq = [&rng] {
      std::vector<uint32_t> toks(48);
      toks[0] = static_cast<uint32_t>(rng.uniform() * 31);
      for (size_t i = 1; i < toks.size(); ++i)
        toks[i] =
            rng.uniform() < 0.5 ? toks[i - 1] : static_cast<uint32_t>(rng.uniform() * 31);
      return toks;
    };
    for (int s = 0; s < 30; ++s) n.corpus.push_back(draw_seq());
    for (int s = 0; s < 8; ++s) n.held_out.push_back(draw_seq());
    return n;
  }();
  return net;
}

}  // namespace

TEST_CASE("mmcs is 1 when the truth is recovered up to permutation") {
  const GroundTruthBasis basis = sample_ground_truth_features(6, 10, 5);
  Mat permuted(10, 6);
  const int perm[6] = {3, 0, 5, 1, 4, 2};
  for (int c = 0; c < 6; ++c) permuted.col(c) = basis.features.col(perm[c]);
  CHECK(std::abs(mmcs(permuted, basis) - 1.0) < 1e-9);
}

TEST_CASE("a single orthogonal learned column scores zero") {
  Mat truth = Mat::Zero(4, 2);
  truth(0, 0) = 1.0f;
  truth(1, 1) = 1.0f;
  Mat learned = Mat::Zero(4, 1);
  learned(2, 0) = 1.0f;
  CHECK(std::abs(mmcs(learned, basis_from(truth))) < 1e-6);
}

TEST_CASE("mmcs matches the brute-force double loop exactly") {
  const GroundTruthBasis basis = sample_ground_truth_features(8, 12, 7);
  Mat learned(12, 16);
  Rng rng(7, stream_id("test.mmcs"));
  fill_normal(rng, learned);
  CHECK(mmcs(learned, basis) == mmcs_oracle(basis.features, learned));
}

TEST_CASE("mmcs ignores dead columns and rejects an all-dead decoder") {
  const GroundTruthBasis basis = sample_ground_truth_features(4, 8, 9);
  Mat learned(8, 3);
  Rng rng(9, stream_id("test.mmcs"));
  fill_normal(rng, learned);
  const double with_all = mmcs(learned, basis);
  Mat bigger(8, 4);
  bigger.leftCols(3) = learned;
  bigger.col(3).setZero();
  CHECK(mmcs(bigger, basis) == with_all);
  CHECK_THROWS_AS(mmcs(Mat::Zero(8, 2), basis), InvalidArgument);
}

TEST_CASE("mmcs is invariant to permutation and positive power-of-two rescaling") {
  const GroundTruthBasis basis = sample_ground_truth_features(5, 9, 13);
  Mat learned(9, 7);
  Rng rng(13, stream_id("test.mmcs"));
  fill_normal(rng, learned);
  const double base = mmcs(learned, basis);
  Mat scaled(9, 7);
  const int perm[7] = {6, 2, 0, 4, 1, 5, 3};
  const float scales[7] = {2.0f, 0.25f, 8.0f, 1.0f, 0.5f, 4.0f, 16.0f};
  for (int c = 0; c < 7; ++c) scaled.col(c) = scales[c] * learned.col(perm[c]);
  CHECK(mmcs(scaled, basis) == base);
}

TEST_CASE("explained variance hits its anchors") {
  Mat x(4, 3);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 2, 4, 6;  // integer entries, mean exact in binary
  CHECK(explained_variance(x, x) == 1.0);
  Mat mean_pred(4, 3);
  for (Eigen::Index c = 0; c < 3; ++c) mean_pred.col(c).setConstant(x.col(c).sum() / 4.0f);
  CHECK(std::abs(explained_variance(x, mean_pred)) < 1e-12);
}

TEST_CASE("explained variance matches a hand recomputation") {
  Mat x(10, 4), xhat(10, 4);
  Rng rng(17, stream_id("test.ev"));
  fill_normal(rng, x);
  fill_normal(rng, xhat);
  xhat = 0.7f * x + 0.3f * xhat;
  double num = 0.0, den = 0.0;
  for (Eigen::Index c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (Eigen::Index r = 0; r < 10; ++r) mean += static_cast<double>(x(r, c));
    mean /= 10.0;
    for (Eigen::Index r = 0; r < 10; ++r) {
      num += std::pow(static_cast<double>(x(r, c)) - static_cast<double>(xhat(r, c)), 2);
      den += std::pow(static_cast<double>(x(r, c)) - mean, 2);
    }
  }
  CHECK(std::abs(explained_variance(x, xhat) - (1.0 - num / den)) < 1e-10);
}

TEST_CASE("explained variance is invariant to a common shift") {
  // entries on a 1/64 grid so the shifts are exact in binary
  Mat x(6, 3), xhat(6, 3);
  Rng rng(19, stream_id("test.ev"));
  fill_normal(rng, x);
  fill_normal(rng, xhat);
  x = (x * 64.0f).array().round().matrix() / 64.0f;
  xhat = (xhat * 64.0f).array().round().matrix() / 64.0f;
  Vec shift(3);
  shift << 0.5f, -2.25f, 1.0f;
  const Mat xs = x.rowwise() + shift.transpose();
  const Mat hs = xhat.rowwise() + shift.transpose();
  CHECK(std::abs(explained_variance(x, xhat) - explained_variance(xs, hs)) < 1e-10);
}

TEST_CASE("explained variance rejects a zero-variance batch") {
  const Mat x = Mat::Constant(5, 3, 2.0f);
  CHECK_THROWS_AS(explained_variance(x, x), DegenerateDenominator);
}

TEST_CASE("mean cosine similarity anchors and zero-row handling") {
  Mat x(2, 4);
  x << 1, 0, 0, 0, 0, 2, 0, 0;
  CHECK(mean_cosine_sim(x, x) == 1.0);
  CHECK(mean_cosine_sim(x, Mat(-x)) == -1.0);
  Mat with_zero = x;
  with_zero.row(1).setZero();
  CHECK(mean_cosine_sim(x, with_zero) == 1.0);  // zero row skipped, row 0 exact
  CHECK(mean_cosine_sim(x, Mat(Mat::Zero(2, 4))) == 0.0);
}

TEST_CASE("sparsity measures on a one-hot row") {
  Mat z = Mat::Zero(1, 16);
  z(0, 5) = 0.25f;
  const SparsityStats s = sparsity_measures(z);
  CHECK(s.mean_l0 == 1.0);
  CHECK(s.mean_l1 == 0.25);
  CHECK(s.mean_hoyer == 1.0);
  // closed form: l1 = v, l2 = v, ratio = v / sqrt(v) = sqrt(v)
  CHECK(std::abs(s.mean_l1_over_sqrt_l2 - 0.5) < 1e-12);
}

TEST_CASE("sparsity measures on a constant row") {
  const float c = 0.25f;
  const Mat z = Mat::Constant(1, 16, c);
  const SparsityStats s = sparsity_measures(z);
  CHECK(s.mean_l0 == 16.0);
  CHECK(s.mean_hoyer == 0.0);
  // closed form via l1 = 16c, l2 = 4c: ratio = 16c / sqrt(4c) = 8 sqrt(c)
  CHECK(std::abs(s.mean_l1_over_sqrt_l2 - 8.0 * std::sqrt(0.25)) < 1e-12);
  // constant magnitude with mixed signs is equally dense
  Mat pm = z;
  for (int i = 0; i < 16; i += 2) pm(0, i) = -c;
  CHECK(sparsity_measures(pm).mean_hoyer == 0.0);
}

TEST_CASE("topk codes respect the k bound in mean L0") {
  const TopKSae sae = init_topk(16, 64, 32, 23);
  Mat x(100, 16);
  Rng rng(23, stream_id("test.sparsity"));
  fill_normal(rng, x);
  const SparsityStats s = sparsity_measures(encode_topk(sae, x));
  CHECK(s.mean_l0 <= 32.0);
  CHECK(s.mean_l0 > 0.0);
}

TEST_CASE("zero rows drop out of the ratio and Hoyer means") {
  Mat z = Mat::Zero(2, 16);
  z(1, 3) = 0.25f;
  const SparsityStats s = sparsity_measures(z);
  CHECK(s.mean_l0 == 0.5);
  CHECK(s.mean_l1 == 0.125);
  CHECK(s.mean_hoyer == 1.0);  // only the one-hot row counts
  CHECK(std::abs(s.mean_l1_over_sqrt_l2 - 0.5) < 1e-12);
  const SparsityStats all_zero = sparsity_measures(Mat::Zero(3, 8));
  CHECK(all_zero.mean_l0 == 0.0);
  CHECK(all_zero.mean_hoyer == 0.0);
  CHECK(all_zero.mean_l1_over_sqrt_l2 == 0.0);
}

TEST_CASE("Hoyer stays inside [0,1] on random nonnegative codes") {
  Mat z(50, 12);
  Rng rng(29, stream_id("test.sparsity"));
  fill_normal(rng, z);
  z = z.cwiseMax(0.0f);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Mat row = z.row(r);
    if (row.cwiseAbs().sum() == 0.0f) continue;
    const double h = sparsity_measures(row).mean_hoyer;
    CHECK(h >= 0.0);
    CHECK(h <= 1.0);
  }
  CHECK_THROWS_AS(sparsity_measures(Mat::Zero(3, 1)), InvalidArgument);
}

TEST_CASE("a lossless reconstruction has a CE score of zero") {
  const auto& net = tied_net();
  const ResidualFn identity = [](const Mat& x) { return x; };
  const CeAblation abl = ce_ablation(net.spec, net.params, 1, identity, net.held_out);
  CHECK(abl.ce_zero > abl.ce_orig);
  CHECK(std::abs(abl.score) < 1e-6);
}

TEST_CASE("a zero reconstruction has a CE score of one") {
  const auto& net = tied_net();
  const ResidualFn zeros = [](const Mat& x) { return Mat(Mat::Zero(x.rows(), x.cols())); };
  const CeAblation abl = ce_ablation(net.spec, net.params, 1, zeros, net.held_out);
  CHECK(std::abs(abl.score - 1.0) < 1e-6);
}

TEST_CASE("an untied random net degenerates the ablation denominator") {
  const auto& net = tied_net();
  NetParams untied = init_step0(net.spec, 33);  // unembed NOT tied to embed
  // amplify the read-out so its confident noise lands clearly above the uniform
  // loss that zero ablation produces
  untied.tensors.at("unembed") *= 50.0f;
  const ResidualFn identity = [](const Mat& x) { return x; };
  CHECK_THROWS_AS(ce_ablation(net.spec, untied, 1, identity, net.held_out),
                  DegenerateDenominator);
}

TEST_CASE("a trained TopK SAE lands strictly between lossless and ablated") {
  const auto& net = tied_net();
  ResidualCapture all;
  for (size_t s = 0; s < net.corpus.size(); ++s) {
    auto result = transformer_forward(net.spec, net.params, net.corpus[s], {1},
                                      static_cast<uint64_t>(s));
    all.append(result.captures.at(0));
  }
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 35;
  const auto [sae, rep] = train(init_topk(16, 64, 6, 34), all.data, cfg);
  const double score = ce_loss_score(net.spec, net.params, sae, 1, net.held_out);
  INFO("ce score " << score);
  CHECK(score > 0.0);
  CHECK(score < 1.0);
}

TEST_CASE("token entropy anchors") {
  // all mass on a single token
  CHECK(token_entropy({{{5, 2.0f}, {5, 3.0f}}}) == 0.0);
  // uniform over 7 distinct ids
  std::vector<TokenActivations> uniform(1);
  for (uint32_t t = 0; t < 7; ++t) uniform[0].push_back({t, 0.5f});
  CHECK(std::abs(token_entropy(uniform) - std::log(7.0)) < 1e-12);
}

TEST_CASE("token entropy matches a brute-force histogram") {
  Rng rng(37, stream_id("test.entropy"));
  std::vector<TokenActivations> latents(6);
  for (auto& latent : latents)
    for (int i = 0; i < 40; ++i)
      latent.push_back({rng.next_u32() % 20, rng.uniform_f32()});

  double expected = 0.0;
  for (const auto& latent : latents) {
    std::vector<double> hist(20, 0.0);
    double total = 0.0;
    for (const auto& [tok, act] : latent) {
      if (act <= 0.0f) continue;
      hist[tok] += static_cast<double>(act);
      total += static_cast<double>(act);
    }
    double h = 0.0;
    for (const double m : hist)
      if (m > 0.0) h -= (m / total) * std::log(m / total);
    expected += h;
  }
  expected /= 6.0;
  CHECK(std::abs(token_entropy(latents) - expected) < 1e-10);
}

TEST_CASE("silent latents are skipped and an all-silent set is an error") {
  const std::vector<TokenActivations> mixed = {{{3, 1.0f}}, {{4, 0.0f}, {9, -2.0f}}};
  CHECK(token_entropy(mixed) == 0.0);  // only the single-token latent counts
  CHECK_THROWS_AS(token_entropy({{{4, 0.0f}}, {}}), DegenerateDenominator);
}

TEST_CASE("perfectly separated scores give AUROC 1") {
  const RocResult r = roc_auroc({4.0, 3.0, 2.0, 1.0}, {true, true, false, false});
  CHECK(r.auroc == 1.0);
  REQUIRE(r.points.size() == 5);
  CHECK(r.points.front().fpr == 0.0);
  CHECK(r.points.front().tpr == 0.0);
  CHECK(r.points.back().fpr == 1.0);
  CHECK(r.points.back().tpr == 1.0);
}

TEST_CASE("independent scores sit at chance level") {
  Rng rng(41, stream_id("test.roc"));
  std::vector<double> scores;
  std::vector<bool> labels;
  for (int i = 0; i < 2000; ++i) {
    scores.push_back(rng.uniform());
    labels.push_back(rng.uniform() < 0.5);
  }
  const RocResult r = roc_auroc(scores, labels);
  double pos = 0, neg = 0;
  for (const bool l : labels) (l ? pos : neg) += 1;
  const double se = std::sqrt((pos + neg + 1.0) / (12.0 * pos * neg));
  CHECK(std::abs(r.auroc - 0.5) < 3.0 * se);
}

TEST_CASE("AUROC equals the pairwise concordance count with half ties") {
  Rng rng(43, stream_id("test.roc"));
  std::vector<double> scores;
  std::vector<bool> labels;
  for (int i = 0; i < 50; ++i) {
    scores.push_back(static_cast<double>(rng.next_u32() % 8));  // heavy ties
    labels.push_back(rng.uniform() < 0.5);
  }
  CHECK(roc_auroc(scores, labels).auroc == pairwise_auroc_oracle(scores, labels));
}

TEST_CASE("AUROC is invariant under strictly increasing transforms") {
  Rng rng(47, stream_id("test.roc"));
  std::vector<double> scores;
  std::vector<bool> labels;
  for (int i = 0; i < 200; ++i) {
    scores.push_back(rng.normal());
    labels.push_back(rng.uniform() < 0.4);
  }
  std::vector<double> warped = scores;
  for (auto& s : warped) s = std::exp(s) + 3.0;
  CHECK(roc_auroc(scores, labels).auroc == roc_auroc(warped, labels).auroc);
}

TEST_CASE("ROC curves are monotone staircases and reject single-class input") {
  Rng rng(53, stream_id("test.roc"));
  std::vector<double> scores;
  std::vector<bool> labels;
  for (int i = 0; i < 100; ++i) {
    scores.push_back(static_cast<double>(rng.next_u32() % 5));
    labels.push_back(rng.uniform() < 0.5);
  }
  const RocResult r = roc_auroc(scores, labels);
  for (size_t i = 1; i < r.points.size(); ++i) {
    CHECK(r.points[i].fpr >= r.points[i - 1].fpr);
    CHECK(r.points[i].tpr >= r.points[i - 1].tpr);
  }
  CHECK_THROWS_AS(roc_auroc({1.0, 2.0}, {true, true}), InvalidArgument);
}

TEST_CASE("pareto frontier base cases") {
  const ParetoPoint a{1.0, 0.5, "a"};
  const auto single = pareto_frontier({a});
  REQUIRE(single.size() == 1);
  CHECK(single[0].run_id == "a");

  const ParetoPoint b{2.0, 0.4, "b"};  // sparser AND better explained: a dominates b
  const auto filtered = pareto_frontier({a, b});
  REQUIRE(filtered.size() == 1);
  CHECK(filtered[0].run_id == "a");

  // duplicate coordinates do not dominate each other
  const ParetoPoint a2{1.0, 0.5, "a2"};
  CHECK(pareto_frontier({a, a2}).size() == 2);
}

TEST_CASE("pareto frontier matches the brute-force filter on a point cloud") {
  Rng rng(59, stream_id("test.pareto"));
  std::vector<ParetoPoint> cloud;
  for (int i = 0; i < 100; ++i)
    cloud.push_back({rng.uniform() * 10.0, rng.uniform(), "p" + std::to_string(i)});

  std::vector<ParetoPoint> expected;
  for (const auto& p : cloud) {
    int dominators = 0;
    for (const auto& q : cloud)
      if (q.sparsity <= p.sparsity && q.explained_variance >= p.explained_variance &&
          (q.sparsity < p.sparsity || q.explained_variance > p.explained_variance))
        ++dominators;
    if (dominators == 0) expected.push_back(p);
  }
  std::sort(expected.begin(), expected.end(),
            [](const ParetoPoint& x, const ParetoPoint& y) { return x.sparsity < y.sparsity; });

  const auto got = pareto_frontier(cloud);
  REQUIRE(got.size() == expected.size());
  for (size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].sparsity == expected[i].sparsity);
    CHECK(got[i].explained_variance == expected[i].explained_variance);
    CHECK(got[i].run_id == expected[i].run_id);
  }
  // along the frontier, paying more sparsity must buy more explained variance
  for (size_t i = 1; i < got.size(); ++i) {
    CHECK(got[i].sparsity > got[i - 1].sparsity);
    CHECK(got[i].explained_variance > got[i - 1].explained_variance);
  }
}

TEST_CASE("the minimizing orientation mirrors the maximizing one") {
  Rng rng(61, stream_id("test.pareto"));
  std::vector<ParetoPoint> cloud, mirrored;
  for (int i = 0; i < 40; ++i) {
    const double s = rng.uniform() * 4.0, v = rng.uniform();
    cloud.push_back({s, v, "p" + std::to_string(i)});
    mirrored.push_back({s, -v, "p" + std::to_string(i)});
  }
  const auto lo = pareto_frontier(mirrored, FrontierOrientation::min_sparsity_min_value);
  const auto hi = pareto_frontier(cloud, FrontierOrientation::min_sparsity_max_value);
  REQUIRE(lo.size() == hi.size());
  for (size_t i = 0; i < lo.size(); ++i) {
    CHECK(lo[i].run_id == hi[i].run_id);
    CHECK(lo[i].explained_variance == -hi[i].explained_variance);
  }
}

TEST_CASE("non-finite pareto points are rejected") {
  CHECK_THROWS_AS(
      pareto_frontier({{std::numeric_limits<double>::quiet_NaN(), 0.5, "bad"}}),
      InvalidArgument);
}

TEST_CASE("metrics reports roundtrip through JSON") {
  MetricsReport r;
  r.explained_variance = 0.875;
  r.cosine_sim = 0.9;
  r.mean_l0 = 12.5;
  r.mean_l1 = 3.25;
  r.mean_l1_over_sqrt_l2 = 2.5;
  r.mean_hoyer = 0.75;
  r.mmcs = 0.96;
  r.ce_loss_score = 0.12;
  r.l1_coef = 0.003f;
  r.seed = 77;
  r.layer = 2;
  r.variant = "step0";
  const MetricsReport back = MetricsReport::from_json(r.to_json());
  CHECK(back.explained_variance == r.explained_variance);
  CHECK(back.mean_hoyer == r.mean_hoyer);
  REQUIRE(back.mmcs.has_value());
  CHECK(*back.mmcs == 0.96);
  CHECK(back.ce_loss_score.has_value());
  CHECK(!back.token_entropy.has_value());
  REQUIRE(back.l1_coef.has_value());
  CHECK(*back.l1_coef == 0.003f);
  CHECK(!back.k.has_value());
  CHECK(back.seed == 77);
  CHECK(back.layer == 2);
  CHECK(back.variant == "step0");
}

TEST_CASE("CSV rows line up with the header") {
  MetricsReport r;
  r.k = 16;
  r.variant = "control";
  const std::string header = metrics_csv_header();
  const std::string row = metrics_csv_row(r);
  CHECK(std::count(header.begin(), header.end(), ',') == 13);
  CHECK(std::count(row.begin(), row.end(), ',') == 13);
  CHECK(row.find("control") != std::string::npos);
  CHECK(row.find(",16,") != std::string::npos);
}
