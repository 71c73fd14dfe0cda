#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "saelab/common.hpp"
#include "saelab/dataset.hpp"
#include "saelab/rng.hpp"
#include "saelab/tensor_store.hpp"

namespace saelab {

// ReLU encoder with bias, linear decoder without bias, L1 sparsity penalty.
struct StandardSae {
  Mat w_enc;  // n_latents x n_in
  Vec b_enc;  // n_latents
  Mat w_dec;  // n_in x n_latents

  Eigen::Index n_in() const { return w_dec.rows(); }
  Eigen::Index n_latents() const { return w_dec.cols(); }
};

// k-sparse SAE: pre-encoder bias subtracted before encoding and added back
// after decoding; only the k largest pre-activations survive.
struct TopKSae {
  Mat w_enc;  // n_latents x n_in
  Vec b_enc;  // n_latents
  Mat w_dec;  // n_in x n_latents
  Vec b_pre;  // n_in
  int k = 1;

  Eigen::Index n_in() const { return w_dec.rows(); }
  Eigen::Index n_latents() const { return w_dec.cols(); }
};

namespace detail {

// Orthonormal columns; blocks of fresh orthonormal bases when more columns than
// rows are requested.
inline Mat orthonormal_columns(int rows, int cols, Rng& rng) {
  Mat w(rows, cols);
  int filled = 0;
  while (filled < cols) {
    Mat g(rows, rows);
    fill_normal(rng, g);
    const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ() * Mat::Identity(rows, rows);
    const int take = std::min(rows, cols - filled);
    w.middleCols(filled, take) = q.leftCols(take);
    filled += take;
  }
  for (int c = 0; c < cols; ++c) w.col(c).normalize();
  return w;
}

inline void renormalize_decoder(Mat& w_dec) {
  for (Eigen::Index c = 0; c < w_dec.cols(); ++c) {
    const float norm = w_dec.col(c).norm();
    if (norm > 0.0f) w_dec.col(c) /= norm;
  }
}

}  // namespace detail

// Orthonormal decoder, tied encoder, zero encoder bias.
inline StandardSae init_standard(int n_in, int n_latents, uint64_t seed) {
  require(n_in >= 1 && n_latents >= 1, "n_in and n_latents must be positive");
  Rng rng(seed, stream_id("sae.init"));
  StandardSae sae;
  sae.w_dec = detail::orthonormal_columns(n_in, n_latents, rng);
  sae.w_enc = sae.w_dec.transpose();
  sae.b_enc = Vec::Zero(n_latents);
  return sae;
}

inline TopKSae init_topk(int n_in, int n_latents, int k, uint64_t seed) {
  require(k >= 1 && k <= n_latents, "k must be in [1, n_latents]");
  Rng rng(seed, stream_id("sae.init"));
  TopKSae sae;
  sae.w_dec = detail::orthonormal_columns(n_in, n_latents, rng);
  sae.w_enc = sae.w_dec.transpose();
  sae.b_enc = Vec::Zero(n_latents);
  sae.b_pre = Vec::Zero(n_in);
  sae.k = k;
  return sae;
}

// Rows of x are samples throughout; single-vector overloads wrap the batch path.

inline Mat encode_standard(const StandardSae& sae, const Mat& x) {
  require(x.cols() == sae.n_in(), "input width does not match the SAE");
  return (((x * sae.w_enc.transpose()).rowwise() + sae.b_enc.transpose()).array().max(0.0f))
      .matrix();
}

inline Vec encode_standard(const StandardSae& sae, const Vec& x) {
  return encode_standard(sae, Mat(x.transpose())).row(0).transpose();
}

inline Mat decode_standard(const StandardSae& sae, const Mat& z) {
  require(z.cols() == sae.n_latents(), "latent width does not match the SAE");
  return z * sae.w_dec.transpose();
}

inline Vec decode_standard(const StandardSae& sae, const Vec& z) {
  return decode_standard(sae, Mat(z.transpose())).row(0).transpose();
}

inline Mat reconstruct(const StandardSae& sae, const Mat& x) {
  return decode_standard(sae, encode_standard(sae, x));
}

namespace detail {

// Pre-activations plus the survivor mask (selected and positive). Ties on the
// selection boundary are broken toward the lower latent index.
inline void topk_codes(const TopKSae& sae, const Mat& x, Mat& codes, Mat& mask) {
  require(x.cols() == sae.n_in(), "input width does not match the SAE");
  require(sae.k >= 1 && sae.k <= sae.n_latents(), "k out of range");
  const Mat pre =
      ((x.rowwise() - sae.b_pre.transpose()) * sae.w_enc.transpose()).rowwise() +
      sae.b_enc.transpose();
  const auto n_latents = sae.n_latents();
  codes = Mat::Zero(x.rows(), n_latents);
  mask = Mat::Zero(x.rows(), n_latents);
  std::vector<int> order(static_cast<size_t>(n_latents));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + sae.k, order.end(), [&](int a, int b) {
      if (pre(r, a) != pre(r, b)) return pre(r, a) > pre(r, b);
      return a < b;
    });
    for (int i = 0; i < sae.k; ++i) {
      const int l = order[static_cast<size_t>(i)];
      if (pre(r, l) > 0.0f) {
        codes(r, l) = pre(r, l);
        mask(r, l) = 1.0f;
      }
    }
  }
}

}  // namespace detail

inline Mat encode_topk(const TopKSae& sae, const Mat& x) {
  Mat codes, mask;
  detail::topk_codes(sae, x, codes, mask);
  return codes;
}

inline Vec encode_topk(const TopKSae& sae, const Vec& x) {
  return encode_topk(sae, Mat(x.transpose())).row(0).transpose();
}

inline Mat decode_topk(const TopKSae& sae, const Mat& z) {
  require(z.cols() == sae.n_latents(), "latent width does not match the SAE");
  return (z * sae.w_dec.transpose()).rowwise() + sae.b_pre.transpose();
}

inline Vec decode_topk(const TopKSae& sae, const Vec& z) {
  return decode_topk(sae, Mat(z.transpose())).row(0).transpose();
}

inline Mat reconstruct(const TopKSae& sae, const Mat& x) {
  return decode_topk(sae, encode_topk(sae, x));
}

struct StandardGrads {
  Mat w_enc;
  Vec b_enc;
  Mat w_dec;
};

struct TopKGrads {
  Mat w_enc;
  Vec b_enc;
  Mat w_dec;
  Vec b_pre;
};

// Loss = per-element-mean squared error + l1_coef * batch-mean L1 of the codes.
// Gradients are closed-form; the ReLU kink uses subgradient zero.
inline std::pair<double, StandardGrads> loss_standard(const StandardSae& sae, const Mat& x,
                                                      float l1_coef) {
  require(x.rows() >= 1, "empty batch");
  require(l1_coef >= 0.0f, "negative l1 coefficient");
  const auto batch = static_cast<float>(x.rows());
  const auto n_elems = static_cast<float>(x.rows() * x.cols());

  const Mat pre = (x * sae.w_enc.transpose()).rowwise() + sae.b_enc.transpose();
  const Mat z = pre.cwiseMax(0.0f);
  const Mat residual = z * sae.w_dec.transpose() - x;

  const double mse = residual.cast<double>().squaredNorm() / static_cast<double>(n_elems);
  const double l1 = z.cast<double>().sum() / static_cast<double>(batch);
  const double loss = mse + static_cast<double>(l1_coef) * l1;

  const Mat d_recon = residual * (2.0f / n_elems);
  StandardGrads g;
  g.w_dec.noalias() = d_recon.transpose() * z;
  Mat d_pre = ((d_recon * sae.w_dec).array() + l1_coef / batch).matrix();
  d_pre = (pre.array() > 0.0f).select(d_pre, Mat::Zero(d_pre.rows(), d_pre.cols()));
  g.w_enc.noalias() = d_pre.transpose() * x;
  g.b_enc = d_pre.colwise().sum().transpose();
  return {loss, std::move(g)};
}

// TopK loss is pure reconstruction error; sparsity comes from the selection.
// Gradient flows straight through the surviving latents only.
inline std::pair<double, TopKGrads> loss_topk(const TopKSae& sae, const Mat& x) {
  require(x.rows() >= 1, "empty batch");
  const auto n_elems = static_cast<float>(x.rows() * x.cols());

  Mat z, mask;
  detail::topk_codes(sae, x, z, mask);
  const Mat centered = x.rowwise() - sae.b_pre.transpose();
  const Mat residual = (z * sae.w_dec.transpose()).rowwise() + sae.b_pre.transpose() - x;

  const double loss = residual.cast<double>().squaredNorm() / static_cast<double>(n_elems);

  const Mat d_recon = residual * (2.0f / n_elems);
  TopKGrads g;
  g.w_dec.noalias() = d_recon.transpose() * z;
  const Mat d_pre = (d_recon * sae.w_dec).cwiseProduct(mask);
  g.w_enc.noalias() = d_pre.transpose() * centered;
  g.b_enc = d_pre.colwise().sum().transpose();
  g.b_pre = (d_recon.colwise().sum() - d_pre.colwise().sum() * sae.w_enc).transpose();
  return {loss, std::move(g)};
}

struct TrainConfig {
  int epochs = 100;
  int batch_size = 256;
  float learning_rate = 1e-3f;
  float l1_coef = 0.0f;  // standard family only
  float val_fraction = 0.1f;
  uint64_t seed = 0;

  void validate() const {
    require(epochs >= 0, "negative epoch count");
    require(batch_size >= 1, "batch size must be positive");
    require(learning_rate > 0.0f, "learning rate must be positive");
    require(l1_coef >= 0.0f, "negative l1 coefficient");
    require(val_fraction > 0.0f && val_fraction < 1.0f, "val_fraction outside (0,1)");
  }
};

struct TrainReport {
  std::vector<double> train_loss;  // one entry per epoch
  std::vector<double> val_mse;
  std::vector<double> val_l0;
  std::vector<double> val_l1;
  std::string final_params_id;
  TrainConfig config;
};

namespace detail {

constexpr float kAdamBeta1 = 0.9f;
constexpr float kAdamBeta2 = 0.999f;
constexpr float kAdamEps = 1e-8f;

template <typename T>
void adam_update(T& param, const T& grad, T& m, T& v, float lr, int t) {
  m = kAdamBeta1 * m + (1.0f - kAdamBeta1) * grad;
  v = (kAdamBeta2 * v.array() + (1.0f - kAdamBeta2) * grad.array().square()).matrix();
  const float c1 = 1.0f - std::pow(kAdamBeta1, static_cast<float>(t));
  const float c2 = 1.0f - std::pow(kAdamBeta2, static_cast<float>(t));
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
}

struct SplitData {
  Mat train;
  Mat val;
};

inline SplitData split_rows(const Mat& rows, float val_fraction, int batch_size, uint64_t seed) {
  const auto n = rows.rows();
  Rng rng(seed, stream_id("sae.split"));
  const auto order = shuffled_indices(static_cast<uint32_t>(n), rng);
  auto n_val = static_cast<Eigen::Index>(std::lround(val_fraction * static_cast<double>(n)));
  n_val = std::max<Eigen::Index>(n_val, 1);
  const Eigen::Index n_train = n - n_val;
  require(n_train >= batch_size, "too few training rows after the validation split");
  SplitData split;
  split.train.resize(n_train, rows.cols());
  split.val.resize(n_val, rows.cols());
  for (Eigen::Index i = 0; i < n_train; ++i) split.train.row(i) = rows.row(order[i]);
  for (Eigen::Index i = 0; i < n_val; ++i) split.val.row(i) = rows.row(order[n_train + i]);
  return split;
}

inline void append_val_metrics(TrainReport& report, const Mat& z, const Mat& residual) {
  const auto n_rows = static_cast<double>(z.rows());
  report.val_mse.push_back(residual.cast<double>().squaredNorm() /
                           static_cast<double>(residual.size()));
  report.val_l0.push_back(
      static_cast<double>((z.array().abs() > kActiveThreshold).count()) / n_rows);
  report.val_l1.push_back(z.cast<double>().array().abs().sum() / n_rows);
}

inline uint64_t hash_mat(const Mat& m, uint64_t h) {
  return fnv1a64(m.data(), sizeof(float) * static_cast<size_t>(m.size()), h);
}

}  // namespace detail

// Adam over shuffled mini-batches; the decoder is renormalized before the first
// step and after every update, so gradients always see unit columns and the
// unit-norm invariant holds at every step boundary. The tail batch is kept.
inline std::pair<StandardSae, TrainReport> train(StandardSae sae, const ActivationDataset& data,
                                                 const TrainConfig& config) {
  config.validate();
  require(data.n_samples() >= config.batch_size, "fewer rows than one batch");
  require(data.n_dense() == sae.n_in(), "data width does not match the SAE");
  TrainReport report;
  report.config = config;
  if (config.epochs > 0) {
    const auto split =
        detail::split_rows(data.rows, config.val_fraction, config.batch_size, config.seed);
    const auto n_train = split.train.rows();
    Mat m_we = Mat::Zero(sae.w_enc.rows(), sae.w_enc.cols()), v_we = m_we;
    Vec m_be = Vec::Zero(sae.b_enc.size()), v_be = m_be;
    Mat m_wd = Mat::Zero(sae.w_dec.rows(), sae.w_dec.cols()), v_wd = m_wd;
    detail::renormalize_decoder(sae.w_dec);
    int step = 0;
    Mat batch(config.batch_size, sae.n_in());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      Rng erng(config.seed, stream_id("sae.epoch", static_cast<uint64_t>(epoch)));
      const auto order = shuffled_indices(static_cast<uint32_t>(n_train), erng);
      double loss_sum = 0.0;
      size_t batch_index = 0;
      for (Eigen::Index start = 0; start < n_train; start += config.batch_size, ++batch_index) {
        const auto rows = std::min<Eigen::Index>(config.batch_size, n_train - start);
        batch.resize(rows, sae.n_in());
        for (Eigen::Index i = 0; i < rows; ++i) batch.row(i) = split.train.row(order[start + i]);
        auto [loss, grads] = loss_standard(sae, batch, config.l1_coef);
        if (!std::isfinite(loss)) throw TrainAbort(static_cast<size_t>(epoch), batch_index);
        ++step;
        detail::adam_update(sae.w_enc, grads.w_enc, m_we, v_we, config.learning_rate, step);
        detail::adam_update(sae.b_enc, grads.b_enc, m_be, v_be, config.learning_rate, step);
        detail::adam_update(sae.w_dec, grads.w_dec, m_wd, v_wd, config.learning_rate, step);
        detail::renormalize_decoder(sae.w_dec);
        loss_sum += loss * static_cast<double>(rows);
      }
      report.train_loss.push_back(loss_sum / static_cast<double>(n_train));
      const Mat z = encode_standard(sae, split.val);
      detail::append_val_metrics(report, z, Mat(decode_standard(sae, z) - split.val));
    }
  }
  uint64_t h = detail::hash_mat(sae.w_enc, fnv1a64("standard"));
  h = detail::hash_mat(Mat(sae.b_enc), h);
  report.final_params_id = to_hex(detail::hash_mat(sae.w_dec, h));
  return {std::move(sae), std::move(report)};
}

inline std::pair<TopKSae, TrainReport> train(TopKSae sae, const ActivationDataset& data,
                                             const TrainConfig& config) {
  config.validate();
  require(data.n_samples() >= config.batch_size, "fewer rows than one batch");
  require(data.n_dense() == sae.n_in(), "data width does not match the SAE");
  TrainReport report;
  report.config = config;
  if (config.epochs > 0) {
    const auto split =
        detail::split_rows(data.rows, config.val_fraction, config.batch_size, config.seed);
    const auto n_train = split.train.rows();
    Mat m_we = Mat::Zero(sae.w_enc.rows(), sae.w_enc.cols()), v_we = m_we;
    Vec m_be = Vec::Zero(sae.b_enc.size()), v_be = m_be;
    Mat m_wd = Mat::Zero(sae.w_dec.rows(), sae.w_dec.cols()), v_wd = m_wd;
    Vec m_bp = Vec::Zero(sae.b_pre.size()), v_bp = m_bp;
    detail::renormalize_decoder(sae.w_dec);
    int step = 0;
    Mat batch(config.batch_size, sae.n_in());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      Rng erng(config.seed, stream_id("sae.epoch", static_cast<uint64_t>(epoch)));
      const auto order = shuffled_indices(static_cast<uint32_t>(n_train), erng);
      double loss_sum = 0.0;
      size_t batch_index = 0;
      for (Eigen::Index start = 0; start < n_train; start += config.batch_size, ++batch_index) {
        const auto rows = std::min<Eigen::Index>(config.batch_size, n_train - start);
        batch.resize(rows, sae.n_in());
        for (Eigen::Index i = 0; i < rows; ++i) batch.row(i) = split.train.row(order[start + i]);
        auto [loss, grads] = loss_topk(sae, batch);
        if (!std::isfinite(loss)) throw TrainAbort(static_cast<size_t>(epoch), batch_index);
        ++step;
        detail::adam_update(sae.w_enc, grads.w_enc, m_we, v_we, config.learning_rate, step);
        detail::adam_update(sae.b_enc, grads.b_enc, m_be, v_be, config.learning_rate, step);
        detail::adam_update(sae.w_dec, grads.w_dec, m_wd, v_wd, config.learning_rate, step);
        detail::adam_update(sae.b_pre, grads.b_pre, m_bp, v_bp, config.learning_rate, step);
        detail::renormalize_decoder(sae.w_dec);
        loss_sum += loss * static_cast<double>(rows);
      }
      report.train_loss.push_back(loss_sum / static_cast<double>(n_train));
      const Mat z = encode_topk(sae, split.val);
      detail::append_val_metrics(report, z, Mat(decode_topk(sae, z) - split.val));
    }
  }
  uint64_t h = detail::hash_mat(sae.w_enc, fnv1a64("topk"));
  h = detail::hash_mat(Mat(sae.b_enc), h);
  h = detail::hash_mat(sae.w_dec, h);
  report.final_params_id = to_hex(detail::hash_mat(Mat(sae.b_pre), h));
  return {std::move(sae), std::move(report)};
}

// --- Serialization: SLCK1 tensors plus a JSON sidecar at <path>.json ---

struct SaeMeta {
  std::string family;  // "standard" | "topk"
  TrainConfig config;
  std::string dataset_hash;
  int k = 0;  // topk only

  nlohmann::json to_json() const {
    return {{"family", family},
            {"k", k},
            {"l1_coef", config.l1_coef},
            {"config",
             {{"epochs", config.epochs},
              {"batch_size", config.batch_size},
              {"learning_rate", config.learning_rate},
              {"val_fraction", config.val_fraction},
              {"optimizer", "adam(0.9,0.999,1e-8)"}}},
            {"dataset_hash", dataset_hash},
            {"seed", config.seed}};
  }

  static SaeMeta from_json(const nlohmann::json& j) {
    SaeMeta meta;
    meta.family = j.at("family").get<std::string>();
    meta.k = j.at("k").get<int>();
    meta.config.l1_coef = j.at("l1_coef").get<float>();
    const auto& c = j.at("config");
    meta.config.epochs = c.at("epochs").get<int>();
    meta.config.batch_size = c.at("batch_size").get<int>();
    meta.config.learning_rate = c.at("learning_rate").get<float>();
    meta.config.val_fraction = c.at("val_fraction").get<float>();
    meta.config.seed = j.at("seed").get<uint64_t>();
    meta.dataset_hash = j.at("dataset_hash").get<std::string>();
    return meta;
  }
};

namespace detail {

inline void write_sidecar(const SaeMeta& meta, const std::string& path) {
  std::ofstream out(path + ".json");
  require(out.good(), "cannot open " + path + ".json for writing");
  out << meta.to_json().dump(2) << "\n";
}

inline SaeMeta read_sidecar(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in.good()) throw ParseError("missing SAE sidecar: " + path + ".json");
  nlohmann::json j;
  try {
    in >> j;
    return SaeMeta::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad SAE sidecar " + path + ".json: " + e.what());
  }
}

}  // namespace detail

inline void save_sae(const StandardSae& sae, SaeMeta meta, const std::string& path) {
  meta.family = "standard";
  meta.k = 0;
  TensorStore store;
  store.add("w_enc", {static_cast<uint32_t>(sae.w_enc.rows()),
                      static_cast<uint32_t>(sae.w_enc.cols())}) = sae.w_enc;
  store.add("b_enc", {static_cast<uint32_t>(sae.b_enc.size())}) = sae.b_enc;
  store.add("w_dec", {static_cast<uint32_t>(sae.w_dec.rows()),
                      static_cast<uint32_t>(sae.w_dec.cols())}) = sae.w_dec;
  save_slck(store, path);
  detail::write_sidecar(meta, path);
}

inline void save_sae(const TopKSae& sae, SaeMeta meta, const std::string& path) {
  meta.family = "topk";
  meta.k = sae.k;
  TensorStore store;
  store.add("w_enc", {static_cast<uint32_t>(sae.w_enc.rows()),
                      static_cast<uint32_t>(sae.w_enc.cols())}) = sae.w_enc;
  store.add("b_enc", {static_cast<uint32_t>(sae.b_enc.size())}) = sae.b_enc;
  store.add("w_dec", {static_cast<uint32_t>(sae.w_dec.rows()),
                      static_cast<uint32_t>(sae.w_dec.cols())}) = sae.w_dec;
  store.add("b_pre", {static_cast<uint32_t>(sae.b_pre.size())}) = sae.b_pre;
  save_slck(store, path);
  detail::write_sidecar(meta, path);
}

inline std::pair<StandardSae, SaeMeta> load_standard_sae(const std::string& path) {
  const SaeMeta meta = detail::read_sidecar(path);
  if (meta.family != "standard") throw ParseError(path + " does not hold a standard SAE");
  const TensorStore store = load_slck(path);
  StandardSae sae;
  sae.w_enc = store.at("w_enc");
  sae.b_enc = store.at("b_enc");
  sae.w_dec = store.at("w_dec");
  require(sae.w_enc.rows() == sae.b_enc.size() && sae.w_enc.rows() == sae.w_dec.cols() &&
              sae.w_enc.cols() == sae.w_dec.rows(),
          "inconsistent SAE tensor shapes in " + path);
  return {std::move(sae), meta};
}

inline std::pair<TopKSae, SaeMeta> load_topk_sae(const std::string& path) {
  const SaeMeta meta = detail::read_sidecar(path);
  if (meta.family != "topk") throw ParseError(path + " does not hold a TopK SAE");
  const TensorStore store = load_slck(path);
  TopKSae sae;
  sae.w_enc = store.at("w_enc");
  sae.b_enc = store.at("b_enc");
  sae.w_dec = store.at("w_dec");
  sae.b_pre = store.at("b_pre");
  sae.k = meta.k;
  require(sae.w_enc.rows() == sae.b_enc.size() && sae.w_enc.rows() == sae.w_dec.cols() &&
              sae.w_enc.cols() == sae.w_dec.rows() && sae.b_pre.size() == sae.w_dec.rows(),
          "inconsistent SAE tensor shapes in " + path);
  require(sae.k >= 1 && sae.k <= sae.n_latents(), "stored k out of range in " + path);
  return {std::move(sae), meta};
}

}  // namespace saelab
