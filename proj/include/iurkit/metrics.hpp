#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iurkit/datamodel.hpp"

namespace iurkit {

using TokenTexts = std::vector<std::string>;

struct EvalResult {
  double em = 0.0;                  // [0, 1]
  std::map<int, double> bleu;       // n = 1..4, [0, 100]
  std::map<int, double> rouge_n;    // n = 1, 2, [0, 100]
  double rouge_l = 0.0;             // [0, 100]
  std::size_t count = 0;

  nlohmann::json to_json() const;
  std::string table() const;  // fixed-width, one metric per line
};

bool exact_match(const TokenTexts& hyp, const TokenTexts& ref);

// Corpus BLEU over n = 1..max_n with brevity penalty; zero match counts are
// replaced by 1e-9.
double bleu(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs, int max_n = 4);

// Sentence-level F1 averaged over the corpus.
double rouge_n(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs, int n);
double rouge_l(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs);

EvalResult evaluate(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs);

}  // namespace iurkit
