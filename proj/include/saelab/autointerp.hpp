#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "saelab/common.hpp"
#include "saelab/dataset.hpp"
#include "saelab/llm_client.hpp"
#include "saelab/metrics.hpp"
#include "saelab/rng.hpp"
#include "saelab/sae.hpp"
#include "saelab/tokenizer.hpp"
#include "saelab/transformer.hpp"

namespace saelab {

// Delimiters, prompt templates, and the verdict protocol are pinned in a
// versioned file so scores stay comparable across runs.
struct PromptSet {
  std::string version = "autointerp_v1";
  std::string delimiter_open = "<<";
  std::string delimiter_close = ">>";
  std::string explanation_system;
  std::string explanation_user_prefix;
  std::string explanation_user_suffix;
  std::string fuzzing_system;
  std::string fuzzing_user_prefix;
  std::string fuzzing_user_mid;
  std::string fuzzing_user_suffix;
};

inline PromptSet default_prompt_set() {
  PromptSet p;
  p.explanation_system =
      "You are describing the behavior of one latent unit of a sparse autoencoder. In each "
      "example, the tokens that activate the latent are delimited with << >>. Reply with one "
      "concise sentence describing what the latent responds to.";
  p.explanation_user_prefix =
      "Here are the strongest examples for this latent; activating tokens are delimited with "
      "<< >>.\n\n";
  p.explanation_user_suffix = "\nIn one sentence: what does this latent respond to?";
  p.fuzzing_system =
      "You judge whether the delimited tokens in a text are instances of what a latent "
      "explanation describes. Answer with exactly Yes or No.";
  p.fuzzing_user_prefix = "Explanation: ";
  p.fuzzing_user_mid = "\n\nText:\n";
  p.fuzzing_user_suffix =
      "\n\nAre the delimited tokens instances of what the explanation describes? Answer Yes "
      "or No.";
  return p;
}

inline PromptSet load_prompt_set(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ParseError("cannot open " + path);
  nlohmann::json node = nlohmann::json::parse(in, nullptr, false);
  if (node.is_discarded()) throw ParseError("invalid JSON in " + path);
  PromptSet p;
  auto field = [&](const char* name) -> std::string {
    if (!node.contains(name) || !node[name].is_string())
      throw ParseError(std::string("prompt file missing string field '") + name + "'");
    return node[name].get<std::string>();
  };
  p.version = field("version");
  p.delimiter_open = field("delimiter_open");
  p.delimiter_close = field("delimiter_close");
  p.explanation_system = field("explanation_system");
  p.explanation_user_prefix = field("explanation_user_prefix");
  p.explanation_user_suffix = field("explanation_user_suffix");
  p.fuzzing_system = field("fuzzing_system");
  p.fuzzing_user_prefix = field("fuzzing_user_prefix");
  p.fuzzing_user_mid = field("fuzzing_user_mid");
  p.fuzzing_user_suffix = field("fuzzing_user_suffix");
  require(!p.delimiter_open.empty() && !p.delimiter_close.empty(),
          "prompt file: delimiters must be nonempty");
  return p;
}

// --- Dossiers ---

struct DossierExample {
  std::vector<uint32_t> tokens;
  std::vector<float> activations;  // latent activation per token
  uint32_t doc_id = 0;
  uint32_t start = 0;  // position of the window's first token within its document
  float peak = 0.0f;
};

struct LatentDossier {
  Eigen::Index latent = 0;
  std::vector<DossierExample> examples;  // peak activation descending
  float peak = 0.0f;
};

struct DossierSet {
  std::vector<LatentDossier> dossiers;
  size_t requested = 0;  // latents asked for
  size_t alive = 0;      // latents that fired at least once on the corpus
};

namespace detail {

inline Mat sae_codes(const StandardSae& sae, const Mat& x) { return encode_standard(sae, x); }
inline Mat sae_codes(const TopKSae& sae, const Mat& x) { return encode_topk(sae, x); }

}  // namespace detail

// Uniformly samples alive latents, then records for each the top non-overlapping
// windows by peak activation: every window placement is scanned, highest peak
// wins, ties go to the earlier document then the earlier start. Fewer alive
// latents than requested yields all of them, with the shortfall visible in the
// returned counts.
template <class Sae>
DossierSet collect_dossiers(const Sae& sae, const ResidualCapture& acts,
                            size_t n_latents_sampled = 100, size_t windows_per_latent = 20,
                            size_t window = 32, uint64_t seed = 0) {
  const ActivationDataset& ds = acts.data;
  require(ds.n_samples() > 0, "dossiers: no activations");
  require(ds.has_token_ids(), "dossiers: activations must carry token ids");
  require(ds.n_dense() == sae.n_in(), "dossiers: activation width does not match the SAE");
  const size_t n_rows = static_cast<size_t>(ds.n_samples());
  require(acts.positions.size() == n_rows && acts.seq_ids.size() == n_rows,
          "dossiers: capture positions/seq_ids incomplete");
  require(window > 0 && windows_per_latent > 0, "dossiers: window counts must be positive");

  const Eigen::Index n_latents = sae.n_latents();
  const Eigen::Index chunk = 4096;

  std::vector<char> fired(static_cast<size_t>(n_latents), 0);
  for (Eigen::Index at = 0; at < ds.n_samples(); at += chunk) {
    const Eigen::Index m = std::min(chunk, ds.n_samples() - at);
    const Mat z = detail::sae_codes(sae, Mat(ds.rows.middleRows(at, m)));
    for (Eigen::Index c = 0; c < n_latents; ++c)
      if (!fired[static_cast<size_t>(c)] && (z.col(c).array() > kActiveThreshold).any())
        fired[static_cast<size_t>(c)] = 1;
  }
  std::vector<Eigen::Index> alive_ids;
  for (Eigen::Index c = 0; c < n_latents; ++c)
    if (fired[static_cast<size_t>(c)]) alive_ids.push_back(c);

  DossierSet out;
  out.requested = n_latents_sampled;
  out.alive = alive_ids.size();

  Rng rng(seed, stream_id("autointerp.sample"));
  const std::vector<uint32_t> order =
      shuffled_indices(static_cast<uint32_t>(alive_ids.size()), rng);
  const size_t n_take = std::min(n_latents_sampled, alive_ids.size());
  std::vector<Eigen::Index> chosen(n_take);
  for (size_t i = 0; i < n_take; ++i) chosen[i] = alive_ids[order[i]];
  std::sort(chosen.begin(), chosen.end());
  if (chosen.empty()) return out;

  // Activations of just the chosen latents, full corpus.
  Mat za(ds.n_samples(), static_cast<Eigen::Index>(n_take));
  for (Eigen::Index at = 0; at < ds.n_samples(); at += chunk) {
    const Eigen::Index m = std::min(chunk, ds.n_samples() - at);
    const Mat z = detail::sae_codes(sae, Mat(ds.rows.middleRows(at, m)));
    for (size_t j = 0; j < n_take; ++j) za.block(at, static_cast<Eigen::Index>(j), m, 1) = z.col(chosen[j]);
  }

  // Rows grouped per document, ordered by position.
  std::map<uint32_t, std::vector<size_t>> docs;
  for (size_t r = 0; r < n_rows; ++r) docs[acts.seq_ids[r]].push_back(r);
  for (auto& [doc, rows] : docs)
    std::sort(rows.begin(), rows.end(),
              [&](size_t a, size_t b) { return acts.positions[a] < acts.positions[b]; });

  const Eigen::Index w = static_cast<Eigen::Index>(window);
  for (size_t j = 0; j < n_take; ++j) {
    // All window placements that contain a firing, strongest first.
    std::vector<std::tuple<float, uint32_t, size_t>> cands;  // peak, doc, start offset
    for (const auto& [doc, rows] : docs) {
      if (rows.size() < window) continue;
      for (size_t s = 0; s + window <= rows.size(); ++s) {
        float peak = 0.0f;
        for (size_t t = 0; t < window; ++t)
          peak = std::max(peak, za(static_cast<Eigen::Index>(rows[s + t]),
                                   static_cast<Eigen::Index>(j)));
        if (peak > kActiveThreshold) cands.emplace_back(peak, doc, s);
      }
    }
    std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
      return std::get<2>(a) < std::get<2>(b);
    });

    LatentDossier dossier;
    dossier.latent = chosen[j];
    std::map<uint32_t, std::vector<std::pair<size_t, size_t>>> taken;  // doc -> [start, end)
    for (const auto& [peak, doc, s] : cands) {
      if (dossier.examples.size() >= windows_per_latent) break;
      bool overlaps = false;
      for (const auto& [b, e] : taken[doc])
        if (s < e && b < s + window) overlaps = true;
      if (overlaps) continue;
      taken[doc].emplace_back(s, s + window);
      const std::vector<size_t>& rows = docs.at(doc);
      DossierExample ex;
      ex.doc_id = doc;
      ex.start = acts.positions[rows[s]];
      ex.peak = peak;
      ex.tokens.resize(window);
      ex.activations.resize(window);
      for (size_t t = 0; t < window; ++t) {
        ex.tokens[t] = ds.token_ids[rows[s + t]];
        ex.activations[t] = za(static_cast<Eigen::Index>(rows[s + t]), static_cast<Eigen::Index>(j));
      }
      dossier.examples.push_back(std::move(ex));
    }
    if (dossier.examples.empty()) continue;  // alive but no full-length window contains a firing
    dossier.peak = dossier.examples.front().peak;
    out.dossiers.push_back(std::move(dossier));
  }
  return out;
}

// Plain dataset treated as one document in row order.
template <class Sae>
DossierSet collect_dossiers(const Sae& sae, const ActivationDataset& ds,
                            size_t n_latents_sampled = 100, size_t windows_per_latent = 20,
                            size_t window = 32, uint64_t seed = 0) {
  ResidualCapture cap;
  cap.layer = -1;
  cap.data = ds;
  const size_t n = static_cast<size_t>(ds.n_samples());
  cap.positions.resize(n);
  for (size_t i = 0; i < n; ++i) cap.positions[i] = static_cast<uint32_t>(i);
  cap.seq_ids.assign(n, 0);
  return collect_dossiers(sae, cap, n_latents_sampled, windows_per_latent, window, seed);
}

// --- Fuzzing items ---

struct FuzzingItem {
  std::string text;
  bool label = false;  // true when the delimited spans are the active tokens
  Eigen::Index latent = 0;
  std::vector<std::pair<size_t, size_t>> spans;  // [begin, end) token ranges
};

struct FuzzingSet {
  std::vector<FuzzingItem> items;  // positives first, then negatives
  size_t requested_positive = 0;
  size_t requested_negative = 0;
};

inline std::vector<std::pair<size_t, size_t>> active_runs(const std::vector<float>& activations) {
  std::vector<std::pair<size_t, size_t>> runs;
  size_t i = 0;
  while (i < activations.size()) {
    if (activations[i] > kActiveThreshold) {
      size_t j = i;
      while (j < activations.size() && activations[j] > kActiveThreshold) ++j;
      runs.emplace_back(i, j);
      i = j;
    } else {
      ++i;
    }
  }
  return runs;
}

namespace detail {

inline std::string token_text(uint32_t id) {
  if (id == kDocBoundary) return "\n";
  return std::string(1, static_cast<char>(static_cast<unsigned char>(id)));
}

inline std::string render_with_spans(const std::vector<uint32_t>& tokens,
                                     const std::vector<std::pair<size_t, size_t>>& spans,
                                     const PromptSet& prompts) {
  std::string out;
  size_t si = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (si < spans.size() && i == spans[si].first) out += prompts.delimiter_open;
    out += token_text(tokens[i]);
    if (si < spans.size() && i + 1 == spans[si].second) {
      out += prompts.delimiter_close;
      ++si;
    }
  }
  return out;
}

}  // namespace detail

// Window text with every maximal run of active tokens delimited.
inline std::string render_window(const std::vector<uint32_t>& tokens,
                                 const std::vector<float>& activations,
                                 const PromptSet& prompts) {
  require(tokens.size() == activations.size(), "render_window: length mismatch");
  return detail::render_with_spans(tokens, active_runs(activations), prompts);
}

// Positive items delimit exactly the active tokens of the top examples.
// Negative items reuse dossier windows but delimit uniformly random spans of
// zero activation, mirroring the span count and lengths of the positives, so
// labels are balanced when the material allows. Shortfalls shrink the list.
inline FuzzingSet render_fuzzing_items(const LatentDossier& dossier, size_t n_positive,
                                       size_t n_negative, const PromptSet& prompts,
                                       uint64_t seed) {
  require(!dossier.examples.empty(), "fuzzing: dossier has no examples");
  FuzzingSet out;
  out.requested_positive = n_positive;
  out.requested_negative = n_negative;

  const size_t n_pos = std::min(n_positive, dossier.examples.size());
  for (size_t i = 0; i < n_pos; ++i) {
    const DossierExample& ex = dossier.examples[i];
    FuzzingItem item;
    item.latent = dossier.latent;
    item.label = true;
    item.spans = active_runs(ex.activations);
    item.text = detail::render_with_spans(ex.tokens, item.spans, prompts);
    out.items.push_back(std::move(item));
  }
  if (n_pos == 0) return out;

  for (size_t i = 0; i < n_negative; ++i) {
    // Mirror the span-length structure of positive i (cycled).
    const std::vector<std::pair<size_t, size_t>>& model_spans = out.items[i % n_pos].spans;
    std::vector<size_t> lengths;
    for (const auto& [b, e] : model_spans) lengths.push_back(e - b);
    std::sort(lengths.begin(), lengths.end(), std::greater<>());

    Rng rng(seed, stream_id("autointerp.fuzz", static_cast<uint64_t>(dossier.latent), i));
    bool placed_item = false;
    for (size_t attempt = 0; attempt < dossier.examples.size() && !placed_item; ++attempt) {
      const DossierExample& ex =
          dossier.examples[(n_pos + i + attempt) % dossier.examples.size()];
      std::vector<char> free(ex.tokens.size(), 0);
      for (size_t t = 0; t < ex.tokens.size(); ++t)
        free[t] = ex.activations[t] <= kActiveThreshold;
      std::vector<std::pair<size_t, size_t>> spans;
      bool ok = true;
      for (const size_t len : lengths) {
        std::vector<size_t> starts;
        for (size_t s = 0; s + len <= ex.tokens.size(); ++s) {
          bool fits = true;
          for (size_t t = s; t < s + len; ++t)
            if (!free[t]) fits = false;
          if (fits) starts.push_back(s);
        }
        if (starts.empty()) {
          ok = false;
          break;
        }
        const size_t s = starts[rng.next_u32() % starts.size()];
        spans.emplace_back(s, s + len);
        for (size_t t = s; t < s + len; ++t) free[t] = 0;
      }
      if (!ok) continue;
      std::sort(spans.begin(), spans.end());
      FuzzingItem item;
      item.latent = dossier.latent;
      item.label = false;
      item.spans = std::move(spans);
      item.text = detail::render_with_spans(ex.tokens, item.spans, prompts);
      out.items.push_back(std::move(item));
      placed_item = true;
    }
  }
  return out;
}

// --- Explanation and scoring ---

inline std::string generate_explanation(const LatentDossier& dossier, LlmClient& client,
                                        const PromptSet& prompts, size_t n_examples = 20) {
  require(!dossier.examples.empty(), "explanation: dossier has no examples");
  std::string user = prompts.explanation_user_prefix;
  const size_t n = std::min(n_examples, dossier.examples.size());
  for (size_t k = 0; k < n; ++k) {
    const DossierExample& ex = dossier.examples[k];
    user += "Example " + std::to_string(k + 1) + ": " +
            render_window(ex.tokens, ex.activations, prompts) + "\n";
  }
  user += prompts.explanation_user_suffix;
  return client.complete({{"system", prompts.explanation_system}, {"user", user}});
}

// One explanation per dossier; an endpoint failure marks that latent failed and
// the run continues.
inline std::vector<std::optional<std::string>> explain_dossiers(
    const std::vector<LatentDossier>& dossiers, LlmClient& client, const PromptSet& prompts,
    size_t n_examples = 20) {
  std::vector<std::optional<std::string>> out;
  out.reserve(dossiers.size());
  for (const LatentDossier& d : dossiers) {
    try {
      out.push_back(generate_explanation(d, client, prompts, n_examples));
    } catch (const LlmError&) {
      out.push_back(std::nullopt);
    }
  }
  return out;
}

// Leading yes/no token, case-insensitive, punctuation ignored.
inline std::optional<bool> parse_verdict(const std::string& reply) {
  size_t i = 0;
  while (i < reply.size() && !std::isalpha(static_cast<unsigned char>(reply[i]))) ++i;
  size_t j = i;
  std::string word;
  while (j < reply.size() && std::isalpha(static_cast<unsigned char>(reply[j])))
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(reply[j++]))));
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

struct FuzzingScore {
  std::vector<double> scores;  // kept items: 1 = judged correctly delimited
  std::vector<bool> labels;
  std::vector<size_t> kept;  // indices into the item list
  size_t dropped = 0;        // unparseable verdicts or failed requests
  RocResult roc;
};

inline FuzzingScore score_fuzzing(const std::vector<FuzzingItem>& items,
                                  const std::string& explanation, LlmClient& client,
                                  const PromptSet& prompts) {
  require(!items.empty(), "fuzzing: no items to score");
  FuzzingScore out;
  for (size_t idx = 0; idx < items.size(); ++idx) {
    const std::string user = prompts.fuzzing_user_prefix + explanation + prompts.fuzzing_user_mid +
                             items[idx].text + prompts.fuzzing_user_suffix;
    std::optional<bool> verdict;
    try {
      verdict = parse_verdict(client.complete({{"system", prompts.fuzzing_system}, {"user", user}}));
    } catch (const LlmError&) {
      verdict = std::nullopt;
    }
    if (!verdict) {
      ++out.dropped;
      continue;
    }
    out.scores.push_back(*verdict ? 1.0 : 0.0);
    out.labels.push_back(items[idx].label);
    out.kept.push_back(idx);
  }
  require(!out.scores.empty(), "fuzzing: every verdict was dropped");
  out.roc = roc_auroc(out.scores, out.labels);
  return out;
}

// Offline stand-in for the chat endpoint: explains a latent by listing the
// delimited tokens of its examples, and judges fuzzing items by lexical overlap
// between the explanation and the delimited spans. Deterministic, no network.
class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(PromptSet prompts = default_prompt_set())
      : prompts_(std::move(prompts)) {}

 private:
  std::string do_complete(const std::vector<ChatMessage>& messages) override {
    std::string system, user;
    for (const ChatMessage& m : messages)
      (m.role == "system" ? system : user) += m.content;
    return system == prompts_.fuzzing_system ? judge(user) : explain(user);
  }

  std::vector<std::string> delimited_spans(const std::string& text) const {
    std::vector<std::string> spans;
    size_t at = 0;
    while (true) {
      const size_t b = text.find(prompts_.delimiter_open, at);
      if (b == std::string::npos) break;
      const size_t s = b + prompts_.delimiter_open.size();
      const size_t e = text.find(prompts_.delimiter_close, s);
      if (e == std::string::npos) break;
      spans.push_back(text.substr(s, e - s));
      at = e + prompts_.delimiter_close.size();
    }
    return spans;
  }

  std::string explain(const std::string& user) const {
    // Scan only the examples; the instruction prefix mentions << >> itself.
    std::string body = user;
    if (user.rfind(prompts_.explanation_user_prefix, 0) == 0)
      body = user.substr(prompts_.explanation_user_prefix.size());
    std::vector<std::string> distinct;
    for (const std::string& s : delimited_spans(body))
      if (std::find(distinct.begin(), distinct.end(), s) == distinct.end()) distinct.push_back(s);
    if (distinct.empty()) return "Responds to nothing in particular.";
    std::string out = "Responds to tokens such as: ";
    for (size_t i = 0; i < distinct.size(); ++i) {
      if (i > 0) out += ", ";
      out += distinct[i];
    }
    return out + ".";
  }

  std::string judge(const std::string& user) const {
    std::string explanation, text = user;
    if (user.rfind(prompts_.fuzzing_user_prefix, 0) == 0) {
      const size_t eb = prompts_.fuzzing_user_prefix.size();
      const size_t ee = user.find(prompts_.fuzzing_user_mid, eb);
      if (ee != std::string::npos) {
        explanation = user.substr(eb, ee - eb);
        text = user.substr(ee + prompts_.fuzzing_user_mid.size());
      }
    }
    // Tokens listed by explain() if the explanation came from this mock.
    std::vector<std::string> listed;
    const std::string marker = "such as: ";
    if (const size_t lb = explanation.find(marker); lb != std::string::npos) {
      std::string rest = explanation.substr(lb + marker.size());
      if (!rest.empty() && rest.back() == '.') rest.pop_back();
      size_t at = 0;
      while (at <= rest.size()) {
        const size_t comma = rest.find(", ", at);
        listed.push_back(rest.substr(at, comma == std::string::npos ? std::string::npos
                                                                    : comma - at));
        if (comma == std::string::npos) break;
        at = comma + 2;
      }
    }
    for (const std::string& span : delimited_spans(text)) {
      if (listed.empty()) {
        if (!span.empty() && explanation.find(span) != std::string::npos) return "Yes";
      } else {
        for (const std::string& tok : listed)
          if (span == tok || (!tok.empty() && span.find(tok) != std::string::npos)) return "Yes";
      }
    }
    return "No";
  }

  PromptSet prompts_;
};

}  // namespace saelab
