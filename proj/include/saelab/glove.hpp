#pragma once

#include <cstdlib>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/dataset.hpp"

namespace saelab {

struct WordVectorSet {
  std::vector<std::string> vocabulary;
  Mat vectors;  // n_words x dim

  Eigen::Index n_words() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }
};

// Whitespace-separated text format: one word followed by its components per
// line. The dimensionality is taken from the first record; every later record
// must agree. Errors carry 1-based line numbers.
inline WordVectorSet load_glove(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ParseError("cannot open " + path);

  std::vector<std::string> words;
  std::vector<float> values;
  std::unordered_set<std::string> seen;
  Eigen::Index dim = -1;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;  // blank line (e.g. trailing newline)
    size_t end = line.find_first_of(" \t", start);
    if (end == std::string::npos) throw ParseError("record has no vector components", line_no);
    const std::string word = line.substr(start, end - start);
    if (!seen.insert(word).second) throw ParseError("duplicate word '" + word + "'", line_no);

    Eigen::Index count = 0;
    const char* cursor = line.c_str() + end;
    while (true) {
      char* after = nullptr;
      const float v = std::strtof(cursor, &after);
      if (after == cursor) break;  // no more numbers
      values.push_back(v);
      ++count;
      cursor = after;
    }
    while (*cursor == ' ' || *cursor == '\t' || *cursor == '\r') ++cursor;
    if (*cursor != '\0') throw ParseError("unparseable vector component", line_no);
    if (count == 0) throw ParseError("record has no vector components", line_no);
    if (dim < 0) {
      dim = count;
    } else if (count != dim) {
      throw ParseError("expected " + std::to_string(dim) + " components, found " +
                           std::to_string(count),
                       line_no);
    }
    words.push_back(word);
  }
  if (words.empty()) throw ParseError("no word-vector records in " + path);

  WordVectorSet set;
  set.vocabulary = std::move(words);
  set.vectors.resize(static_cast<Eigen::Index>(set.vocabulary.size()), dim);
  for (Eigen::Index r = 0; r < set.vectors.rows(); ++r)
    for (Eigen::Index c = 0; c < dim; ++c)
      set.vectors(r, c) = values[static_cast<size_t>(r * dim + c)];
  return set;
}

// Word vectors as SAE training data; token ids index back into the vocabulary.
inline ActivationDataset as_dataset(const WordVectorSet& set) {
  ActivationDataset ds;
  ds.rows = set.vectors;
  ds.token_ids.resize(static_cast<size_t>(set.n_words()));
  for (size_t i = 0; i < ds.token_ids.size(); ++i) ds.token_ids[i] = static_cast<uint32_t>(i);
  return ds;
}

}  // namespace saelab
