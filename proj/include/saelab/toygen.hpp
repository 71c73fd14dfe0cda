#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/dataset.hpp"
#include "saelab/rng.hpp"

namespace saelab {

// Ground-truth dictionary for toy data: columns are feature directions,
// IID uniform on the unit sphere in the dense space.
struct GroundTruthBasis {
  Mat features;  // n_dense x n_sparse, unit-norm columns

  Eigen::Index n_sparse() const { return features.cols(); }
  Eigen::Index n_dense() const { return features.rows(); }
};

inline GroundTruthBasis sample_ground_truth_features(int n_sparse, int n_dense, Rng& rng) {
  require(n_sparse >= 1 && n_dense >= 1, "feature counts must be positive");
  GroundTruthBasis basis;
  basis.features.resize(n_dense, n_sparse);
  fill_normal(rng, basis.features);
  for (int c = 0; c < n_sparse; ++c) basis.features.col(c).normalize();
  return basis;
}

inline GroundTruthBasis sample_ground_truth_features(int n_sparse, int n_dense, uint64_t seed) {
  Rng rng(seed, stream_id("toygen.basis"));
  return sample_ground_truth_features(n_sparse, n_dense, rng);
}

// Coefficient process: correlated Gaussian pushed through the standard normal CDF,
// index-decayed, rescaled to an expected activity of mean_active, thinned by
// Bernoulli trials, and scaled by U[0,1).
struct CoefficientModel {
  MatD covariance;    // n_sparse x n_sparse, symmetric PSD
  double decay;       // in (0, 1]
  double mean_active; // expected nonzero count per sample

  Eigen::Index n_sparse() const { return covariance.rows(); }
};

inline CoefficientModel default_coefficient_model(int n_sparse, Rng& rng, double decay = 0.99,
                                                  double mean_active = 5.0) {
  require(n_sparse >= 1, "n_sparse must be positive");
  MatD a(n_sparse, n_sparse);
  for (int c = 0; c < n_sparse; ++c)
    for (int r = 0; r < n_sparse; ++r) a(r, c) = rng.normal();
  CoefficientModel model;
  model.covariance = a * a.transpose();
  model.decay = decay;
  model.mean_active = mean_active;
  return model;
}

namespace detail {

// Lower-triangular factor L with L*L^T = cov. Cholesky when positive definite,
// eigendecomposition with clamped eigenvalues on the PSD boundary.
inline MatD psd_factor(const MatD& cov) {
  require(cov.rows() == cov.cols(), "covariance must be square");
  if (cov.rows() == 0 || cov.isZero(0.0)) return MatD::Zero(cov.rows(), cov.cols());
  Eigen::LLT<MatD> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<MatD> es(cov);
  require(es.eigenvalues().minCoeff() >= -1e-8, "covariance is not PSD");
  VecD clamped = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * clamped.asDiagonal();
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

}  // namespace detail

// One sample per row; matches the reference procedure step for step, including
// the index-from-0 decay convention (feature 0 never decays) and drawing the
// uniform multipliers for every entry.
inline Mat generate_coefficients(const CoefficientModel& model, int n_samples, Rng& rng) {
  const auto n = model.n_sparse();
  require(n >= 1, "model has no features");
  require(n_samples >= 0, "negative sample count");
  const MatD chol = detail::psd_factor(model.covariance);

  Mat coef = Mat::Zero(n_samples, n);
  VecD z(n), p(n);
  for (int s = 0; s < n_samples; ++s) {
    for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
    p.noalias() = chol * z;
    for (Eigen::Index i = 0; i < n; ++i)
      p(i) = std::pow(detail::std_normal_cdf(p(i)), model.decay * static_cast<double>(i));
    const double total = p.sum();
    if (total > 0.0)
      p *= model.mean_active / total;
    else
      p.setZero();
    for (Eigen::Index i = 0; i < n; ++i) p(i) = std::clamp(p(i), 0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i)
      if (rng.uniform() >= p(i)) p(i) = -1.0;  // mark dropped entries
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = rng.uniform();
      if (p(i) >= 0.0) coef(s, i) = static_cast<float>(u);
    }
  }
  return coef;
}

inline ActivationDataset generate_toy_dataset(const GroundTruthBasis& basis,
                                              const CoefficientModel& model, int n_samples,
                                              Rng& rng) {
  require(basis.n_sparse() == model.n_sparse(), "basis/model dimension mismatch");
  ActivationDataset ds;
  ds.coefficients = generate_coefficients(model, n_samples, rng);
  ds.rows.noalias() = ds.coefficients * basis.features.transpose();
  return ds;
}

inline ActivationDataset generate_toy_dataset(const GroundTruthBasis& basis,
                                              const CoefficientModel& model, int n_samples,
                                              uint64_t seed) {
  Rng rng(seed, stream_id("toygen.coef"));
  return generate_toy_dataset(basis, model, n_samples, rng);
}

// Heavy-tailed shifted Pareto.
struct LomaxParams {
  double shape;  // alpha > 0
  double scale;  // lambda > 0
};

inline double lomax_icdf(const LomaxParams& params, double u) {
  require(params.shape > 0.0 && params.scale > 0.0, "Lomax parameters must be positive");
  require(u >= 0.0 && u < 1.0, "u outside [0,1)");
  return params.scale * (std::pow(1.0 - u, -1.0 / params.shape) - 1.0);
}

inline VecD sample_lomax(const LomaxParams& params, int n, Rng& rng) {
  require(n >= 0, "negative sample count");
  VecD out(n);
  for (int i = 0; i < n; ++i) out(i) = lomax_icdf(params, rng.uniform());
  return out;
}

// Linear projection of sparse features into the dense space plus Gaussian noise.
struct ProjectionModel {
  MatD proj;       // n_dense x n_sparse
  MatD noise_cov;  // n_dense x n_dense, symmetric PSD

  Eigen::Index n_sparse() const { return proj.cols(); }
  Eigen::Index n_dense() const { return proj.rows(); }
};

inline VecD project_sparse_to_dense(const VecD& x_sparse, const ProjectionModel& model, Rng& rng) {
  require(x_sparse.size() == model.n_sparse(), "sparse vector dimension mismatch");
  require(model.noise_cov.rows() == model.n_dense(), "noise covariance dimension mismatch");
  VecD out = model.proj * x_sparse;
  if (!model.noise_cov.isZero(0.0)) {
    const MatD factor = detail::psd_factor(model.noise_cov);
    VecD z(model.n_dense());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    out += factor * z;
  }
  return out;
}

// Rows of x_sparse are samples.
inline MatD project_batch(const MatD& x_sparse, const ProjectionModel& model, Rng& rng) {
  require(x_sparse.cols() == model.n_sparse(), "sparse batch dimension mismatch");
  MatD out = x_sparse * model.proj.transpose();
  if (!model.noise_cov.isZero(0.0)) {
    const MatD factor = detail::psd_factor(model.noise_cov);
    MatD z(x_sparse.rows(), model.n_dense());
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
    out.noalias() += z * factor.transpose();
  }
  return out;
}

namespace detail {

inline MatD pseudoinverse_full_row_rank(const MatD& d) {
  Eigen::CompleteOrthogonalDecomposition<MatD> cod(d);
  if (cod.rank() < d.rows()) throw SingularMatrix("projection matrix is rank-deficient");
  return cod.pseudoInverse();
}

}  // namespace detail

// Minimum-norm preimage through the Moore-Penrose pseudoinverse; the projection
// matrix is wide, so no two-sided inverse exists.
inline VecD recover_sparse(const VecD& x_dense, const ProjectionModel& model) {
  require(x_dense.size() == model.n_dense(), "dense vector dimension mismatch");
  return detail::pseudoinverse_full_row_rank(model.proj) * x_dense;
}

inline MatD recover_batch(const MatD& x_dense, const ProjectionModel& model) {
  require(x_dense.cols() == model.n_dense(), "dense batch dimension mismatch");
  return x_dense * detail::pseudoinverse_full_row_rank(model.proj).transpose();
}

enum class GaussianMatching { global, per_dimension };

// IID Gaussian rows with moments matched to the source data. Per-dimension
// matching preserves the anisotropy of the source; global is kept for ablation.
inline ActivationDataset gaussian_control(const ActivationDataset& data, GaussianMatching matching,
                                          Rng& rng) {
  const auto n = data.n_samples();
  const auto d = data.n_dense();
  require(n > 0 && d > 0, "empty dataset");
  Vec mean(d), stddev(d);
  if (matching == GaussianMatching::per_dimension) {
    for (Eigen::Index c = 0; c < d; ++c) {
      const float mu = data.rows.col(c).mean();
      mean(c) = mu;
      stddev(c) = std::sqrt((data.rows.col(c).array() - mu).square().sum() / static_cast<float>(n));
    }
  } else {
    const float mu = data.rows.mean();
    mean.setConstant(mu);
    stddev.setConstant(
        std::sqrt((data.rows.array() - mu).square().sum() / static_cast<float>(n * d)));
  }
  ActivationDataset out;
  out.rows.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < d; ++c) out.rows(r, c) = mean(c) + stddev(c) * rng.normal_f32();
  return out;
}

inline ActivationDataset gaussian_control(const ActivationDataset& data, GaussianMatching matching,
                                          uint64_t seed) {
  Rng rng(seed, stream_id("toygen.control"));
  return gaussian_control(data, matching, rng);
}

}  // namespace saelab
