#pragma once

#include <cmath>

#include "saelab/common.hpp"
#include "saelab/dataset.hpp"
#include "saelab/rng.hpp"

namespace saelab {

// Two-layer ReLU network, n_in -> 4*n_in -> n_in.
struct MlpParams {
  Mat w1;  // hidden x n_in
  Vec b1;  // hidden
  Mat w2;  // n_out x hidden
  Vec b2;  // n_out

  Eigen::Index n_in() const { return w1.cols(); }
  Eigen::Index hidden() const { return w1.rows(); }
  Eigen::Index n_out() const { return w2.rows(); }
};

inline MlpParams init_mlp(int n_in, Rng& rng) {
  require(n_in >= 1, "n_in must be positive");
  const int hidden = 4 * n_in;
  MlpParams p;
  p.w1.resize(hidden, n_in);
  p.w2.resize(n_in, hidden);
  fill_normal(rng, p.w1);
  fill_normal(rng, p.w2);
  // Kaiming-normal: std sqrt(2 / fan_in) per layer.
  p.w1 *= std::sqrt(2.0f / static_cast<float>(n_in));
  p.w2 *= std::sqrt(2.0f / static_cast<float>(hidden));
  p.b1 = Vec::Zero(hidden);
  p.b2 = Vec::Zero(n_in);
  return p;
}

inline MlpParams init_mlp(int n_in, uint64_t seed) {
  Rng rng(seed, stream_id("mlp.init"));
  return init_mlp(n_in, rng);
}

// Rows of x are samples.
inline Mat mlp_forward(const MlpParams& params, const Mat& x) {
  require(params.w1.rows() == params.b1.size() && params.w2.rows() == params.b2.size() &&
              params.w2.cols() == params.w1.rows(),
          "inconsistent MLP shapes");
  require(x.cols() == params.n_in(), "input width does not match the MLP");
  Mat h = (x * params.w1.transpose()).rowwise() + params.b1.transpose();
  h = h.cwiseMax(0.0f);
  return (h * params.w2.transpose()).rowwise() + params.b2.transpose();
}

inline ActivationDataset mlp_forward(const MlpParams& params, const ActivationDataset& data) {
  ActivationDataset out;
  out.rows = mlp_forward(params, data.rows);
  out.token_ids = data.token_ids;
  return out;
}

}  // namespace saelab
