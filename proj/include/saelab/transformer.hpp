#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "saelab/dataset.hpp"
#include "saelab/rng.hpp"
#include "saelab/tensor_store.hpp"

namespace saelab {

// Pythia-like shell: sequential pre-norm decoder-only blocks with rotary
// position encoding and causal attention. All math in f32.
struct NetSpec {
  int n_layers = 1;
  int d_model = 64;
  int n_heads = 2;
  int d_head = 32;
  int d_mlp = 256;  // 4 * d_model by default
  int vocab_size = 257;
  int context_length = 256;

  void validate() const {
    require(n_layers >= 1 && d_model >= 1 && n_heads >= 1 && d_head >= 1 && d_mlp >= 1 &&
                vocab_size >= 1 && context_length >= 1,
            "all NetSpec counts must be positive");
    require(d_model == n_heads * d_head, "d_model must equal n_heads * d_head");
    require(d_head % 2 == 0, "rotary encoding needs an even head dimension");
  }
};

inline NetSpec make_net_spec(int n_layers, int d_model, int n_heads, int vocab_size,
                             int context_length) {
  NetSpec spec;
  spec.n_layers = n_layers;
  spec.d_model = d_model;
  spec.n_heads = n_heads;
  require(n_heads >= 1 && d_model % n_heads == 0, "d_model must divide into heads");
  spec.d_head = d_model / n_heads;
  spec.d_mlp = 4 * d_model;
  spec.vocab_size = vocab_size;
  spec.context_length = context_length;
  spec.validate();
  return spec;
}

enum class NetVariant { loaded, step0, rerand_incl_emb, rerand_excl_emb, control };

inline const char* variant_name(NetVariant v) {
  switch (v) {
    case NetVariant::loaded: return "loaded";
    case NetVariant::step0: return "step0";
    case NetVariant::rerand_incl_emb: return "rerand_incl_emb";
    case NetVariant::rerand_excl_emb: return "rerand_excl_emb";
    case NetVariant::control: return "control";
  }
  return "unknown";
}

struct NetParams {
  TensorStore tensors;
  NetVariant variant = NetVariant::loaded;
  uint64_t control_seed = 0;  // keys the per-occurrence embeddings of the control variant
};

namespace detail {

inline std::vector<std::pair<std::string, std::vector<uint32_t>>> net_schema(const NetSpec& spec) {
  const auto d = static_cast<uint32_t>(spec.d_model);
  const auto m = static_cast<uint32_t>(spec.d_mlp);
  const auto v = static_cast<uint32_t>(spec.vocab_size);
  std::vector<std::pair<std::string, std::vector<uint32_t>>> schema;
  schema.emplace_back("embed", std::vector<uint32_t>{v, d});
  for (int l = 0; l < spec.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    schema.emplace_back(p + "ln1.g", std::vector<uint32_t>{d});
    schema.emplace_back(p + "ln1.b", std::vector<uint32_t>{d});
    for (const char* w : {"wq", "wk", "wv", "wo"})
      schema.emplace_back(p + "attn." + w, std::vector<uint32_t>{d, d});
    for (const char* b : {"bq", "bk", "bv", "bo"})
      schema.emplace_back(p + "attn." + b, std::vector<uint32_t>{d});
    schema.emplace_back(p + "ln2.g", std::vector<uint32_t>{d});
    schema.emplace_back(p + "ln2.b", std::vector<uint32_t>{d});
    schema.emplace_back(p + "mlp.w_in", std::vector<uint32_t>{d, m});
    schema.emplace_back(p + "mlp.b_in", std::vector<uint32_t>{m});
    schema.emplace_back(p + "mlp.w_out", std::vector<uint32_t>{m, d});
    schema.emplace_back(p + "mlp.b_out", std::vector<uint32_t>{d});
  }
  schema.emplace_back("ln_f.g", std::vector<uint32_t>{d});
  schema.emplace_back("ln_f.b", std::vector<uint32_t>{d});
  schema.emplace_back("unembed", std::vector<uint32_t>{d, v});
  return schema;
}

inline bool is_embedding_tensor(const std::string& name) {
  return name == "embed" || name == "unembed";
}

inline bool is_norm_gain(const std::string& name) {
  return name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0 &&
         (name.rfind("ln", 0) == 0 || name.find(".ln") != std::string::npos);
}

inline bool is_output_projection(const std::string& name) {
  const auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".wo") || ends_with("w_out");
}

inline bool is_bias_or_norm_shift(const std::string& name, const std::vector<uint32_t>& dims) {
  return dims.size() == 1 && !is_norm_gain(name);
}

}  // namespace detail

// Shapes, schema coverage, and finiteness; run after load or construction.
inline void validate_net_params(const NetSpec& spec, const NetParams& params) {
  spec.validate();
  for (const auto& [name, dims] : detail::net_schema(spec)) {
    require(params.tensors.has(name), "missing tensor: " + name);
    require(params.tensors.dims(name) == dims, "wrong shape for tensor: " + name);
    require(params.tensors.at(name).allFinite(), "non-finite entries in tensor: " + name);
  }
}

// Fresh GPT-NeoX-style initialization: weights N(0, 0.02^2), output projections
// scaled down by 1/sqrt(2 * n_layers), norm gains at one, all biases zero.
inline NetParams init_step0(const NetSpec& spec, uint64_t seed) {
  spec.validate();
  NetParams params;
  params.variant = NetVariant::step0;
  const float base_std = 0.02f;
  const float proj_std = base_std / std::sqrt(2.0f * static_cast<float>(spec.n_layers));
  for (const auto& [name, dims] : detail::net_schema(spec)) {
    Mat& t = params.tensors.add(name, dims);
    if (detail::is_norm_gain(name)) {
      t.setConstant(1.0f);
    } else if (detail::is_bias_or_norm_shift(name, dims)) {
      t.setZero();
    } else {
      Rng rng(seed, stream_id("net.step0", fnv1a64(name)));
      fill_normal(rng, t);
      t *= detail::is_output_projection(name) ? proj_std : base_std;
    }
  }
  return params;
}

// Replace every tensor by IID draws matching its per-tensor mean and population
// variance. With include_embeddings=false the embedding and unembedding tensors
// are carried over verbatim.
inline NetParams rerandomize(const NetSpec& spec, const NetParams& reference,
                             bool include_embeddings, uint64_t seed) {
  validate_net_params(spec, reference);
  NetParams params;
  params.variant = include_embeddings ? NetVariant::rerand_incl_emb : NetVariant::rerand_excl_emb;
  params.control_seed = reference.control_seed;
  for (const auto& name : reference.tensors.names()) {
    const Mat& src = reference.tensors.at(name);
    Mat& dst = params.tensors.add(name, reference.tensors.dims(name));
    if (!include_embeddings && detail::is_embedding_tensor(name)) {
      dst = src;
      continue;
    }
    const TensorStats stats = tensor_stats(src);
    Rng rng(seed, stream_id("net.rerand", fnv1a64(name)));
    fill_normal(rng, dst);
    dst = (dst.array() * static_cast<float>(stats.stddev) + static_cast<float>(stats.mean))
              .matrix();
  }
  return params;
}

struct CheckpointStats {
  std::vector<std::pair<std::string, TensorStats>> per_tensor;
};

inline CheckpointStats checkpoint_stats(const NetParams& params) {
  CheckpointStats stats;
  for (const auto& name : params.tensors.names())
    stats.per_tensor.emplace_back(name, tensor_stats(params.tensors.at(name)));
  return stats;
}

// Residual stream at the output of one block: one dataset row per (sequence,
// position), with the token id, position, and sequence id carried alongside.
struct ResidualCapture {
  int layer = 0;
  ActivationDataset data;
  std::vector<uint32_t> positions;
  std::vector<uint32_t> seq_ids;

  void append(const ResidualCapture& other) {
    if (data.rows.size() == 0) {
      *this = other;
      return;
    }
    require(layer == other.layer, "appending captures from different layers");
    require(data.n_dense() == other.data.n_dense(), "capture width mismatch");
    const auto n = data.n_samples();
    data.rows.conservativeResize(n + other.data.n_samples(), Eigen::NoChange);
    data.rows.bottomRows(other.data.n_samples()) = other.data.rows;
    data.token_ids.insert(data.token_ids.end(), other.data.token_ids.begin(),
                          other.data.token_ids.end());
    positions.insert(positions.end(), other.positions.begin(), other.positions.end());
    seq_ids.insert(seq_ids.end(), other.seq_ids.begin(), other.seq_ids.end());
  }
};

struct ForwardResult {
  Mat logits;  // seq x vocab
  std::vector<ResidualCapture> captures;  // ordered by layer index
};

enum class SubstitutionMode { reconstruction, zero };

// Maps a seq x d_model residual matrix to its replacement.
using ResidualFn = std::function<Mat(const Mat&)>;

namespace detail {

inline Mat layer_norm(const Mat& x, const Mat& g, const Mat& b) {
  constexpr float eps = 1e-5f;
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mean = x.row(r).mean();
    const float var = (x.row(r).array() - mean).square().mean();
    const float inv = 1.0f / std::sqrt(var + eps);
    out.row(r) = ((x.row(r).array() - mean) * inv * g.col(0).transpose().array() +
                  b.col(0).transpose().array())
                     .matrix();
  }
  return out;
}

// NeoX rotary encoding: head-dim index i pairs with i + d_head/2, angle
// pos * base^(-2i/d_head), applied across the full head dimension.
inline void apply_rope(Mat& x, int n_heads, int d_head) {
  const int half = d_head / 2;
  for (Eigen::Index p = 0; p < x.rows(); ++p)
    for (int h = 0; h < n_heads; ++h) {
      const int col0 = h * d_head;
      for (int i = 0; i < half; ++i) {
        const double theta =
            static_cast<double>(p) *
            std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
        const float c = static_cast<float>(std::cos(theta));
        const float s = static_cast<float>(std::sin(theta));
        const float a = x(p, col0 + i);
        const float b = x(p, col0 + half + i);
        x(p, col0 + i) = a * c - b * s;
        x(p, col0 + half + i) = a * s + b * c;
      }
    }
}

inline Mat embed_tokens(const NetSpec& spec, const NetParams& params,
                        const std::vector<uint32_t>& tokens, uint64_t seq_id) {
  const Mat& embed = params.tensors.at("embed");
  Mat x(static_cast<Eigen::Index>(tokens.size()), spec.d_model);
  if (params.variant == NetVariant::control) {
    // Every token occurrence gets an independent standard Gaussian embedding,
    // keyed by (control seed, sequence, position) so passes are reproducible.
    for (size_t p = 0; p < tokens.size(); ++p) {
      Rng rng(params.control_seed, stream_id("net.control", seq_id, p));
      for (int c = 0; c < spec.d_model; ++c) x(static_cast<Eigen::Index>(p), c) = rng.normal_f32();
    }
  } else {
    for (size_t p = 0; p < tokens.size(); ++p)
      x.row(static_cast<Eigen::Index>(p)) = embed.row(tokens[p]);
  }
  return x;
}

inline ForwardResult run_forward(const NetSpec& spec, const NetParams& params,
                                 const std::vector<uint32_t>& tokens,
                                 const std::vector<int>& capture_layers, int sub_layer,
                                 SubstitutionMode mode, const ResidualFn* recon, uint64_t seq_id) {
  require(!tokens.empty(), "empty token sequence");
  require(static_cast<int>(tokens.size()) <= spec.context_length,
          "sequence exceeds context length");
  for (uint32_t t : tokens)
    require(t < static_cast<uint32_t>(spec.vocab_size), "token id out of vocabulary");
  for (int l : capture_layers)
    require(l >= 0 && l < spec.n_layers, "capture layer out of range");

  const auto& ts = params.tensors;
  const auto seq = static_cast<Eigen::Index>(tokens.size());
  Mat x = embed_tokens(spec, params, tokens, seq_id);

  ForwardResult result;
  const float scale = 1.0f / std::sqrt(static_cast<float>(spec.d_head));
  for (int l = 0; l < spec.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const Mat h = layer_norm(x, ts.at(p + "ln1.g"), ts.at(p + "ln1.b"));
    Mat q = (h * ts.at(p + "attn.wq")).rowwise() + ts.at(p + "attn.bq").col(0).transpose();
    Mat k = (h * ts.at(p + "attn.wk")).rowwise() + ts.at(p + "attn.bk").col(0).transpose();
    Mat v = (h * ts.at(p + "attn.wv")).rowwise() + ts.at(p + "attn.bv").col(0).transpose();
    apply_rope(q, spec.n_heads, spec.d_head);
    apply_rope(k, spec.n_heads, spec.d_head);

    Mat mixed(seq, spec.d_model);
    for (int head = 0; head < spec.n_heads; ++head) {
      const auto qh = q.middleCols(head * spec.d_head, spec.d_head);
      const auto kh = k.middleCols(head * spec.d_head, spec.d_head);
      Mat scores = qh * kh.transpose() * scale;
      // Causal softmax: strictly the prefix; masked entries become exact zeros
      // so positions after i never contribute to row i.
      for (Eigen::Index i = 0; i < seq; ++i) {
        const float m = scores.row(i).head(i + 1).maxCoeff();
        float total = 0.0f;
        for (Eigen::Index j = 0; j <= i; ++j) {
          scores(i, j) = std::exp(scores(i, j) - m);
          total += scores(i, j);
        }
        scores.row(i).head(i + 1) /= total;
        scores.row(i).tail(seq - i - 1).setZero();
      }
      mixed.middleCols(head * spec.d_head, spec.d_head).noalias() =
          scores * v.middleCols(head * spec.d_head, spec.d_head);
    }
    x += (mixed * ts.at(p + "attn.wo")).rowwise() + ts.at(p + "attn.bo").col(0).transpose();

    const Mat h2 = layer_norm(x, ts.at(p + "ln2.g"), ts.at(p + "ln2.b"));
    Mat inner = (h2 * ts.at(p + "mlp.w_in")).rowwise() + ts.at(p + "mlp.b_in").col(0).transpose();
    inner = inner.cwiseMax(0.0f);
    x += (inner * ts.at(p + "mlp.w_out")).rowwise() + ts.at(p + "mlp.b_out").col(0).transpose();

    if (std::find(capture_layers.begin(), capture_layers.end(), l) != capture_layers.end()) {
      ResidualCapture cap;
      cap.layer = l;
      cap.data.rows = x;
      cap.data.token_ids = tokens;
      cap.positions.resize(tokens.size());
      for (size_t i = 0; i < tokens.size(); ++i) cap.positions[i] = static_cast<uint32_t>(i);
      cap.seq_ids.assign(tokens.size(), static_cast<uint32_t>(seq_id));
      result.captures.push_back(std::move(cap));
    }
    if (l == sub_layer) {
      if (mode == SubstitutionMode::zero) {
        x.setZero();
      } else {
        require(recon != nullptr && *recon, "reconstruction mode needs a residual function");
        Mat replaced = (*recon)(x);
        require(replaced.rows() == x.rows() && replaced.cols() == x.cols(),
                "residual function changed the activation shape");
        x = std::move(replaced);
      }
    }
  }

  const Mat final_norm = layer_norm(x, ts.at("ln_f.g"), ts.at("ln_f.b"));
  result.logits.noalias() = final_norm * ts.at("unembed");
  std::sort(result.captures.begin(), result.captures.end(),
            [](const ResidualCapture& a, const ResidualCapture& b) { return a.layer < b.layer; });
  return result;
}

}  // namespace detail

inline ForwardResult transformer_forward(const NetSpec& spec, const NetParams& params,
                                         const std::vector<uint32_t>& tokens,
                                         const std::vector<int>& capture_layers = {},
                                         uint64_t seq_id = 0) {
  return detail::run_forward(spec, params, tokens, capture_layers, -1, SubstitutionMode::zero,
                             nullptr, seq_id);
}

// Forward pass with the residual stream at `layer`'s output replaced, then
// propagation continues normally.
inline Mat substitute_residual(const NetSpec& spec, const NetParams& params,
                               const std::vector<uint32_t>& tokens, int layer,
                               SubstitutionMode mode, const ResidualFn& recon = {},
                               uint64_t seq_id = 0) {
  require(layer >= 0 && layer < spec.n_layers, "substitution layer out of range");
  return detail::run_forward(spec, params, tokens, {}, layer, mode,
                             mode == SubstitutionMode::reconstruction ? &recon : nullptr, seq_id)
      .logits;
}

// Mean next-token cross-entropy in nats over all positions except the last.
inline double cross_entropy_nats(const Mat& logits, const std::vector<uint32_t>& tokens) {
  require(logits.rows() == static_cast<Eigen::Index>(tokens.size()), "logits/token length mismatch");
  require(tokens.size() >= 2, "need at least two tokens for next-token loss");
  double total = 0.0;
  for (size_t i = 0; i + 1 < tokens.size(); ++i) {
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    require(tokens[i + 1] < static_cast<uint32_t>(logits.cols()), "target id out of vocabulary");
    const float m = row.maxCoeff();
    double lse = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) lse += std::exp(static_cast<double>(row(c) - m));
    total += std::log(lse) + static_cast<double>(m) - static_cast<double>(row(tokens[i + 1]));
  }
  return total / static_cast<double>(tokens.size() - 1);
}

}  // namespace saelab
