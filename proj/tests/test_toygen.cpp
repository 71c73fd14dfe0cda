#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "saelab/toygen.hpp"

using namespace saelab;

TEST_CASE("ground truth basis has unit-norm columns and is reproducible") {
  auto basis = sample_ground_truth_features(64, 32, uint64_t{7});
  REQUIRE(basis.n_sparse() == 64);
  REQUIRE(basis.n_dense() == 32);
  for (int c = 0; c < 64; ++c) CHECK(std::abs(basis.features.col(c).norm() - 1.0f) < 1e-6f);

  auto again = sample_ground_truth_features(64, 32, uint64_t{7});
  CHECK(basis.features == again.features);
  auto other = sample_ground_truth_features(64, 32, uint64_t{8});
  CHECK(basis.features != other.features);
}

TEST_CASE("one-dimensional basis is a unit scalar") {
  auto basis = sample_ground_truth_features(1, 1, uint64_t{3});
  CHECK(std::abs(std::abs(basis.features(0, 0)) - 1.0f) < 1e-6f);
}

TEST_CASE("mean pairwise cosine of basis columns matches Monte-Carlo oracle") {
  // Oracle: mean |cos| between random unit vectors in 32 dimensions, estimated
  // from ~2e6 pairs formed by 2000 independent draws.
  const int d = 32, n_oracle = 2000;
  Rng rng(99, stream_id("test.cosine_oracle"));
  MatD v(d, n_oracle);
  for (int c = 0; c < n_oracle; ++c) {
    for (int r = 0; r < d; ++r) v(r, c) = rng.normal();
    v.col(c).normalize();
  }
  const MatD gram = v.transpose() * v;
  double sum = 0.0;
  long count = 0;
  for (int i = 0; i < n_oracle; ++i)
    for (int j = i + 1; j < n_oracle; ++j) {
      sum += std::abs(gram(i, j));
      ++count;
    }
  const double oracle = sum / static_cast<double>(count);
  REQUIRE(oracle > 0.12);
  REQUIRE(oracle < 0.16);

  auto basis = sample_ground_truth_features(64, d, uint64_t{41});
  const MatD fg = (basis.features.transpose() * basis.features).cast<double>();
  double bsum = 0.0;
  long bcount = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = i + 1; j < 64; ++j) {
      bsum += std::abs(fg(i, j));
      ++bcount;
    }
  CHECK(std::abs(bsum / static_cast<double>(bcount) - oracle) < 0.02);
}

TEST_CASE("psd factor reproduces the covariance, including the rank-deficient fallback") {
  Rng rng(5, stream_id("test.psd"));
  MatD a(6, 6);
  for (int c = 0; c < 6; ++c)
    for (int r = 0; r < 6; ++r) a(r, c) = rng.normal();

  const MatD pd = a * a.transpose();
  MatD l = detail::psd_factor(pd);
  CHECK((l * l.transpose() - pd).cwiseAbs().maxCoeff() < 1e-10);

  // Rank-1 covariance defeats plain Cholesky; the eigendecomposition path must cover it.
  VecD v = a.col(0);
  const MatD rank1 = v * v.transpose();
  l = detail::psd_factor(rank1);
  CHECK((l * l.transpose() - rank1).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("non-PSD covariance is rejected") {
  CoefficientModel model;
  model.covariance.resize(2, 2);
  model.covariance << 1.0, 2.0, 2.0, 1.0;  // eigenvalues {3, -1}
  model.decay = 0.99;
  model.mean_active = 1.0;
  Rng rng(1, stream_id("test.nonpsd"));
  CHECK_THROWS_AS(generate_coefficients(model, 4, rng), InvalidArgument);
}

TEST_CASE("coefficient generation matches a straight-line transcription") {
  const int n = 8, n_samples = 200;
  const uint64_t seed = 1234, stream = stream_id("test.coef_oracle");

  Rng setup(seed, stream_id("test.coef_setup"));
  CoefficientModel model = default_coefficient_model(n, setup, 1.0, 2.0);

  Rng rng(seed, stream);
  const Mat got = generate_coefficients(model, n_samples, rng);

  // Oracle: textbook scalar Cholesky plus a literal restatement of the sampling
  // procedure, sharing only the RNG primitive with the implementation.
  MatD l = MatD::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      double s = model.covariance(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j)
        l(j, j) = std::sqrt(s);
      else
        l(i, j) = s / l(j, j);
    }
  }

  Rng oracle_rng(seed, stream);
  Mat expect = Mat::Zero(n_samples, n);
  for (int s = 0; s < n_samples; ++s) {
    std::vector<double> z(n), p(n);
    for (int i = 0; i < n; ++i) z[i] = oracle_rng.normal();
    for (int i = 0; i < n; ++i) {
      double alpha = 0.0;
      for (int j = 0; j <= i; ++j) alpha += l(i, j) * z[j];
      p[i] = 0.5 * std::erfc(-alpha / std::sqrt(2.0));
      p[i] = std::pow(p[i], model.decay * i);
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += p[i];
    for (int i = 0; i < n; ++i) p[i] = std::min(1.0, std::max(0.0, p[i] * model.mean_active / total));
    std::vector<bool> keep(n);
    for (int i = 0; i < n; ++i) keep[i] = oracle_rng.uniform() < p[i];
    for (int i = 0; i < n; ++i) {
      const double u = oracle_rng.uniform();
      if (keep[i]) expect(s, i) = static_cast<float>(u);
    }
  }

  REQUIRE(got.rows() == n_samples);
  REQUIRE(got.cols() == n);
  CHECK(got == expect);
  CHECK((got.array() >= 0.0f).all());
  CHECK((got.array() < 1.0f).all());
}

TEST_CASE("zero mean activity yields all-zero coefficients") {
  Rng setup(2, stream_id("test.zero_setup"));
  CoefficientModel model = default_coefficient_model(16, setup, 0.99, 0.0);
  Rng rng(2, stream_id("test.zero_coef"));
  const Mat coef = generate_coefficients(model, 50, rng);
  CHECK(coef.isZero(0.0f));
}

TEST_CASE("default coefficient process hits the target activity level", "[heavy]") {
  Rng setup(11, stream_id("test.activity_setup"));
  CoefficientModel model = default_coefficient_model(512, setup);
  Rng rng(11, stream_id("test.activity"));
  const Mat coef = generate_coefficients(model, 10000, rng);
  const double mean_nonzero =
      static_cast<double>((coef.array() != 0.0f).count()) / static_cast<double>(coef.rows());
  CHECK(mean_nonzero > 4.5);
  CHECK(mean_nonzero < 5.5);

  // Index decay: the first feature never decays, so it must fire more often than
  // the last. The edge is modest because the CDF saturates at 1 for large draws
  // and 1^i is immune to decay.
  const auto active_count = [&](int c) {
    return static_cast<double>((coef.col(c).array() != 0.0f).count());
  };
  CHECK(active_count(0) > 1.5 * std::max(1.0, active_count(511)));
}

TEST_CASE("toy dataset rows are coefficient mixtures of the basis columns") {
  Rng setup(21, stream_id("test.toy_setup"));
  auto basis = sample_ground_truth_features(24, 12, uint64_t{21});
  CoefficientModel model = default_coefficient_model(24, setup, 0.95, 3.0);
  Rng rng(21, stream_id("test.toy_data"));
  auto ds = generate_toy_dataset(basis, model, 300, rng);

  REQUIRE(ds.n_samples() == 300);
  REQUIRE(ds.n_dense() == 12);
  REQUIRE(ds.has_coefficients());
  const MatD expect = ds.coefficients.cast<double>() * basis.features.transpose().cast<double>();
  CHECK((ds.rows.cast<double>() - expect).cwiseAbs().maxCoeff() < 1e-5);

  // A one-hot coefficient row reproduces a basis column exactly.
  Mat onehot = Mat::Zero(1, 24);
  onehot(0, 7) = 1.0f;
  const Mat row = onehot * basis.features.transpose();
  CHECK(row.transpose() == basis.features.col(7));
}

TEST_CASE("dimension mismatch between basis and model is rejected") {
  Rng setup(3, stream_id("test.mismatch"));
  auto basis = sample_ground_truth_features(8, 4, uint64_t{3});
  CoefficientModel model = default_coefficient_model(9, setup);
  Rng rng(3, stream_id("test.mismatch_data"));
  CHECK_THROWS_AS(generate_toy_dataset(basis, model, 5, rng), InvalidArgument);
}

TEST_CASE("lomax inverse CDF matches numeric inversion of the CDF") {
  // Oracle: bisection on F(x) = 1 - (1 + x/scale)^(-shape).
  const auto cdf = [](const LomaxParams& lp, double x) {
    return 1.0 - std::pow(1.0 + x / lp.scale, -lp.shape);
  };
  const LomaxParams cases[] = {{1.0, 1.0}, {2.5, 0.7}, {0.5, 3.0}};
  const double us[] = {0.0, 0.1, 0.5, 0.9, 0.999};
  for (const auto& lp : cases) {
    for (double u : us) {
      double lo = 0.0, hi = 1.0;
      while (cdf(lp, hi) < u) hi *= 2.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(lp, mid) < u ? lo : hi) = mid;
      }
      CHECK(std::abs(lomax_icdf(lp, u) - lo) < 1e-9 * (1.0 + lo));
    }
  }
  CHECK(lomax_icdf({1.0, 1.0}, 0.5) == Catch::Approx(1.0).margin(1e-12));
  CHECK(lomax_icdf({1.0, 1.0}, 0.0) == 0.0);
  CHECK_THROWS_AS(lomax_icdf({-1.0, 1.0}, 0.5), InvalidArgument);
}

TEST_CASE("lomax samples are nonnegative with the right median") {
  Rng rng(17, stream_id("test.lomax"));
  const VecD x = sample_lomax({1.0, 1.0}, 10000, rng);
  CHECK(x.minCoeff() >= 0.0);
  std::vector<double> v(x.data(), x.data() + x.size());
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  CHECK(std::abs(v[v.size() / 2] - 1.0) < 0.05);
}

TEST_CASE("noiseless projection maps unit coefficients to matrix columns") {
  ProjectionModel model;
  model.proj.resize(2, 3);
  model.proj << 1.0, 0.5, -2.0, 0.0, 1.5, 4.0;
  model.noise_cov = MatD::Zero(2, 2);
  Rng rng(9, stream_id("test.proj"));
  for (int j = 0; j < 3; ++j) {
    VecD e = VecD::Zero(3);
    e(j) = 1.0;
    const VecD out = project_sparse_to_dense(e, model, rng);
    CHECK(out == model.proj.col(j));
  }
}

TEST_CASE("projection noise has the requested covariance", "[heavy]") {
  const int d = 4, n = 100000;
  Rng setup(33, stream_id("test.noise_setup"));
  MatD b(d, d);
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < d; ++r) b(r, c) = 0.5 * setup.normal();
  ProjectionModel model;
  model.proj = MatD::Identity(d, 3);
  model.noise_cov = b * b.transpose();

  Rng rng(33, stream_id("test.noise"));
  const MatD x = project_batch(MatD::Zero(n, 3), model, rng);
  const MatD centered = x.rowwise() - x.colwise().mean();
  const MatD cov = centered.transpose() * centered / static_cast<double>(n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double se = std::sqrt((model.noise_cov(i, i) * model.noise_cov(j, j) +
                                   model.noise_cov(i, j) * model.noise_cov(i, j)) /
                                  n);
      CHECK(std::abs(cov(i, j) - model.noise_cov(i, j)) < 3.0 * se + 1e-12);
    }
}

TEST_CASE("pseudoinverse recovery undoes the projection") {
  Rng rng(61, stream_id("test.recover"));
  ProjectionModel model;
  model.proj.resize(2, 3);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 2; ++r) model.proj(r, c) = rng.normal();
  model.noise_cov = MatD::Zero(2, 2);

  // Right inverse: projecting the recovered point returns the dense point.
  VecD x_de(2);
  x_de << 0.8, -1.7;
  const VecD rec = recover_sparse(x_de, model);
  CHECK((model.proj * rec - x_de).cwiseAbs().maxCoeff() < 1e-10);

  // Points already in the row space of the projection come back exactly.
  VecD v(2);
  v << 2.0, 0.3;
  const VecD x_sp = model.proj.transpose() * v;
  const VecD back = recover_sparse(model.proj * x_sp, model);
  CHECK((back - x_sp).cwiseAbs().maxCoeff() < 1e-10);

  // Batch and single-vector paths agree.
  MatD batch(1, 2);
  batch.row(0) = x_de;
  CHECK((recover_batch(batch, model).row(0).transpose() - rec).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("orthonormal-row projections recover via the transpose") {
  Rng rng(62, stream_id("test.ortho"));
  MatD a(3, 3);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) a(r, c) = rng.normal();
  const MatD q = Eigen::HouseholderQR<MatD>(a).householderQ();
  ProjectionModel model;
  model.proj = q.transpose().topRows(2);
  model.noise_cov = MatD::Zero(2, 2);
  VecD x(2);
  x << -0.4, 1.1;
  CHECK((recover_sparse(x, model) - model.proj.transpose() * x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rank-deficient projection is rejected") {
  ProjectionModel model;
  model.proj.resize(2, 3);
  model.proj << 1.0, 2.0, 3.0, 2.0, 4.0, 6.0;
  model.noise_cov = MatD::Zero(2, 2);
  VecD x(2);
  x << 1.0, 0.0;
  CHECK_THROWS_AS(recover_sparse(x, model), SingularMatrix);
}

TEST_CASE("gaussian control matches per-dimension moments", "[heavy]") {
  const int n = 20000, d = 3;
  ActivationDataset src;
  src.rows.resize(4, d);
  src.rows << 1.0f, 10.0f, -5.0f,  //
      3.0f, 10.0f, -5.0f,          //
      1.0f, 14.0f, -5.0f,          //
      3.0f, 14.0f, -9.0f;
  // Population moments per column: mean {2, 12, -6}, std {1, 2, sqrt(3)}.
  ActivationDataset big;
  big.rows = src.rows.replicate(n / 4, 1);
  const auto ctrl = gaussian_control(big, GaussianMatching::per_dimension, uint64_t{5});
  REQUIRE(ctrl.n_samples() == n);
  REQUIRE(ctrl.n_dense() == d);
  CHECK_FALSE(ctrl.has_coefficients());
  CHECK_FALSE(ctrl.has_token_ids());
  const double means[] = {2.0, 12.0, -6.0};
  const double stds[] = {1.0, 2.0, std::sqrt(3.0)};
  for (int c = 0; c < d; ++c) {
    const double mu = ctrl.rows.col(c).cast<double>().mean();
    const double sd = std::sqrt(
        (ctrl.rows.col(c).cast<double>().array() - mu).square().sum() / (n - 1));
    CHECK(std::abs(mu - means[c]) < 3.0 * stds[c] / std::sqrt(double(n)));
    CHECK(std::abs(sd - stds[c]) < 3.0 * stds[c] / std::sqrt(2.0 * n));
  }
}

TEST_CASE("global gaussian control pools moments across dimensions") {
  ActivationDataset src;
  src.rows = Mat::Constant(50, 4, 3.25f);
  const auto ctrl = gaussian_control(src, GaussianMatching::global, uint64_t{6});
  // Zero variance in the source collapses the control to the constant.
  CHECK((ctrl.rows.array() == 3.25f).all());

  ActivationDataset empty;
  Rng rng(1, stream_id("test.ctrl_empty"));
  CHECK_THROWS_AS(gaussian_control(empty, GaussianMatching::global, rng), InvalidArgument);
}
