#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "saelab/common.hpp"
#include "saelab/rng.hpp"

namespace saelab {

// Byte-level scheme: ids 0..255 are raw bytes, one special id marks the end of
// each document. Bytes always tokenize, so the loaders stay total.
inline constexpr uint32_t kDocBoundary = 256;
inline constexpr uint32_t kByteVocab = 257;  // 256 bytes + boundary marker

struct TokenizerDesc {
  uint32_t vocab_size = kByteVocab;
  std::string scheme = "byte";
};

struct TokenStream {
  std::vector<uint32_t> tokens;
  TokenizerDesc desc;

  size_t size() const { return tokens.size(); }

  void validate() const {
    for (uint32_t t : tokens) require(t < desc.vocab_size, "token id out of range");
  }
};

// Each document contributes its bytes followed by a terminal boundary marker,
// so an empty document is the marker alone and document ends are recoverable.
inline TokenStream tokenize(const std::vector<std::string>& documents) {
  TokenStream stream;
  size_t total = documents.size();
  for (const std::string& doc : documents) total += doc.size();
  stream.tokens.reserve(total);
  for (const std::string& doc : documents) {
    for (unsigned char byte : doc) stream.tokens.push_back(byte);
    stream.tokens.push_back(kDocBoundary);
  }
  return stream;
}

inline std::vector<std::string> detokenize(const TokenStream& stream) {
  require(stream.desc.scheme == "byte", "detokenize: unknown scheme");
  std::vector<std::string> docs;
  std::string current;
  for (uint32_t t : stream.tokens) {
    require(t < kByteVocab, "detokenize: token id out of range");
    if (t == kDocBoundary) {
      docs.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
  }
  require(current.empty(), "detokenize: stream does not end at a document boundary");
  return docs;
}

// UTF-8 corpus input. A .jsonl path is one {"text": ...} object per line; any
// other path is read whole as a single document.
inline std::vector<std::string> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ParseError("cannot open " + path);
  const bool jsonl = path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0;
  if (!jsonl) {
    std::ostringstream whole;
    whole << in.rdbuf();
    return {whole.str()};
  }
  std::vector<std::string> docs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json node = nlohmann::json::parse(line, nullptr, false);
    if (node.is_discarded()) throw ParseError("invalid JSON", line_no);
    if (!node.is_object() || !node.contains("text") || !node["text"].is_string())
      throw ParseError("expected an object with a string \"text\" field", line_no);
    docs.push_back(node["text"].get<std::string>());
  }
  if (docs.empty()) throw ParseError("no documents in " + path);
  return docs;
}

namespace detail {

// Small fixed lexicon of pronounceable nonsense words.
inline const std::vector<std::string>& synth_lexicon() {
  static const std::vector<std::string> lex = [] {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"};
    static const char* nuclei[] = {"a", "e", "i", "o", "u", "ai", "or"};
    static const char* codas[] = {"", "n", "r", "s", "t", "l"};
    std::vector<std::string> out;
    for (const char* o : onsets)
      for (const char* n : nuclei)
        for (const char* c : codas) out.push_back(std::string(o) + n + c);
    return out;
  }();
  return lex;
}

}  // namespace detail

// Deterministic stand-in corpus: words drawn from a fixed lexicon with a
// Zipf-like rank distribution, sentence breaks every so often.
inline std::vector<std::string> synthesize_corpus(size_t n_docs, size_t words_per_doc,
                                                  uint64_t seed) {
  require(words_per_doc > 0, "synthesize_corpus: words_per_doc must be positive");
  const std::vector<std::string>& lex = detail::synth_lexicon();
  // Inverse-CDF table for p(rank) proportional to 1/(rank+2).
  std::vector<double> cdf(lex.size());
  double total = 0.0;
  for (size_t i = 0; i < lex.size(); ++i) {
    total += 1.0 / static_cast<double>(i + 2);
    cdf[i] = total;
  }
  for (double& c : cdf) c /= total;

  std::vector<std::string> docs;
  docs.reserve(n_docs);
  for (size_t d = 0; d < n_docs; ++d) {
    Rng rng(seed, stream_id("corpus.synth", d));
    std::string doc;
    size_t sentence_len = 0;
    for (size_t w = 0; w < words_per_doc; ++w) {
      const double u = rng.uniform();
      size_t rank = static_cast<size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (rank >= lex.size()) rank = lex.size() - 1;
      if (!doc.empty()) doc.push_back(' ');
      doc += lex[rank];
      ++sentence_len;
      if (sentence_len >= 6 && rng.uniform() < 0.25) {
        doc.push_back('.');
        sentence_len = 0;
      }
    }
    doc.push_back('.');
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace saelab
