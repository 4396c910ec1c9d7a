#include "iurkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "iurkit/error.hpp"
#include "iurkit/supervision.hpp"

namespace iurkit {

namespace {

constexpr double kSmoothing = 1e-9;

using NgramCounts = std::map<TokenTexts, std::size_t>;

NgramCounts ngrams(const TokenTexts& toks, int n) {
  NgramCounts counts;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= toks.size(); ++i) ++counts[TokenTexts(toks.begin() + i, toks.begin() + i + len)];
  return counts;
}

std::size_t clipped_overlap(const NgramCounts& hyp, const NgramCounts& ref) {
  std::size_t overlap = 0;
  for (const auto& [gram, c] : hyp)
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
  return overlap;
}

std::size_t total(const NgramCounts& counts) {
  std::size_t t = 0;
  for (const auto& [gram, c] : counts) t += c;
  return t;
}

void check_corpus(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs) {
  if (hyps.empty()) throw Error("cannot score an empty hypothesis corpus");
  if (hyps.size() != refs.size())
    throw Error("hypothesis and reference corpora differ in size (" + std::to_string(hyps.size()) + " vs " +
                std::to_string(refs.size()) + ")");
}

double f1(std::size_t overlap, std::size_t hyp_total, std::size_t ref_total) {
  if (hyp_total == 0 && ref_total == 0) return 1.0;
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(hyp_total);
  const double r = static_cast<double>(overlap) / static_cast<double>(ref_total);
  return 2.0 * p * r / (p + r);
}

}  // namespace

bool exact_match(const TokenTexts& hyp, const TokenTexts& ref) { return hyp == ref; }

double bleu(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs, int max_n) {
  check_corpus(hyps, refs);
  if (max_n < 1) throw Error("BLEU order must be at least 1");
  std::vector<double> matches(static_cast<std::size_t>(max_n), 0.0);
  std::vector<double> totals(static_cast<std::size_t>(max_n), 0.0);
  std::vector<double> ref_totals(static_cast<std::size_t>(max_n), 0.0);
  double hyp_len = 0.0;
  double ref_len = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += static_cast<double>(hyps[s].size());
    ref_len += static_cast<double>(refs[s].size());
    for (int n = 1; n <= max_n; ++n) {
      const auto h = ngrams(hyps[s], n);
      const auto r = ngrams(refs[s], n);
      matches[static_cast<std::size_t>(n - 1)] += static_cast<double>(clipped_overlap(h, r));
      totals[static_cast<std::size_t>(n - 1)] += static_cast<double>(total(h));
      ref_totals[static_cast<std::size_t>(n - 1)] += static_cast<double>(total(r));
    }
  }
  double log_sum = 0.0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    // An order absent from both sides (all sentences too short) counts as precision 1.
    if (totals[k] == 0.0 && ref_totals[k] == 0.0) continue;
    const double m = matches[k] > 0.0 ? matches[k] : kSmoothing;
    log_sum += std::log(m / std::max(totals[k], 1.0));
  }
  const double bp = hyp_len == 0.0 ? 0.0 : (hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

double rouge_n(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs, int n) {
  check_corpus(hyps, refs);
  if (n < 1) throw Error("ROUGE-n order must be at least 1");
  double sum = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = ngrams(hyps[s], n);
    const auto r = ngrams(refs[s], n);
    sum += f1(clipped_overlap(h, r), total(h), total(r));
  }
  return 100.0 * sum / static_cast<double>(hyps.size());
}

double rouge_l(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs) {
  check_corpus(hyps, refs);
  double sum = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s)
    sum += f1(lcs_align(hyps[s], refs[s]).size(), hyps[s].size(), refs[s].size());
  return 100.0 * sum / static_cast<double>(hyps.size());
}

EvalResult evaluate(const std::vector<TokenTexts>& hyps, const std::vector<TokenTexts>& refs) {
  check_corpus(hyps, refs);
  EvalResult r;
  r.count = hyps.size();
  std::size_t hits = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) hits += exact_match(hyps[s], refs[s]) ? 1 : 0;
  r.em = static_cast<double>(hits) / static_cast<double>(hyps.size());
  for (int n = 1; n <= 4; ++n) r.bleu[n] = bleu(hyps, refs, n);
  for (int n = 1; n <= 2; ++n) r.rouge_n[n] = rouge_n(hyps, refs, n);
  r.rouge_l = rouge_l(hyps, refs);
  return r;
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json b = nlohmann::json::object();
  for (const auto& [n, v] : bleu) b[std::to_string(n)] = v;
  nlohmann::json rn = nlohmann::json::object();
  for (const auto& [n, v] : rouge_n) rn[std::to_string(n)] = v;
  return {{"em", em}, {"bleu", b}, {"rouge_n", rn}, {"rouge_l", rouge_l}, {"count", count}};
}

std::string EvalResult::table() const {
  std::string out;
  char line[64];
  auto row = [&](const std::string& name, double v) {
    std::snprintf(line, sizeof(line), "%-10s %10.3f\n", name.c_str(), v);
    out += line;
  };
  std::snprintf(line, sizeof(line), "%-10s %10zu\n", "count", count);
  out += line;
  row("EM", 100.0 * em);
  for (const auto& [n, v] : bleu) row("BLEU-" + std::to_string(n), v);
  for (const auto& [n, v] : rouge_n) row("ROUGE-" + std::to_string(n), v);
  row("ROUGE-L", rouge_l);
  return out;
}

}  // namespace iurkit
