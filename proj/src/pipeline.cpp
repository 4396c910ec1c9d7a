#include "iurkit/pipeline.hpp"

#include "iurkit/error.hpp"

namespace iurkit {

std::optional<DependencyParse> ParseSource::find(const Dialogue& dialogue, std::size_t index) const {
  const ConlluSentence* hit = nullptr;
  bool any_ids = false;
  for (const auto& s : sentences) {
    if (!s.sent_id) continue;
    any_ids = true;
    if (*s.sent_id == dialogue.id) {
      hit = &s;
      break;
    }
  }
  if (hit == nullptr && !any_ids && index < sentences.size()) hit = &sentences[index];
  if (hit != nullptr) return align_parse(hit->parse, dialogue.incomplete);
  if (heuristic) return heuristic_parse(dialogue.incomplete, dialogue.lang);
  return std::nullopt;
}

QueryTemplate make_query(const Dialogue& dialogue, std::size_t index, const PronounLexicon& lexicon,
                         const ParseSource& parses, const QueryOptions& options) {
  // The parse is only consulted when no coreference marker applies.
  std::optional<DependencyParse> parse;
  auto parse_ptr = [&]() -> const DependencyParse* {
    if (!parse) parse = parses.find(dialogue, index);
    return parse ? &*parse : nullptr;
  };
  if (options.mode == QueryMode::Gold) {
    if (!dialogue.rewritten) throw Error("dialogue '" + dialogue.id + "' has no gold rewrite");
    const auto intervals = gold_coref_intervals(dialogue);
    const auto* p = intervals.empty() ? parse_ptr() : nullptr;
    return build_query_from_gold(dialogue.incomplete, intervals, p, options.unify, options.rules);
  }
  const auto* p = match_coref(dialogue.incomplete, lexicon) ? nullptr : parse_ptr();
  return build_query(dialogue.incomplete, lexicon, p, options.unify, options.rules);
}

PreparedCorpus prepare_corpus(std::span<const Dialogue> dialogues, const PronounLexicon& lexicon,
                              const ParseSource& parses, const QueryOptions& options) {
  PreparedCorpus out;
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const auto& d = dialogues[i];
    try {
      auto query = make_query(d, i, lexicon, parses, options);
      auto input = build_input_sequence(query, d);
      auto sup = build_edit_matrix(d, input);
      out.report.examples.push_back(sup.report);
      if (sup.report.status == Expressibility::Failed) continue;
      out.examples.push_back({std::move(input), std::move(sup.matrix)});
      out.queries.push_back(std::move(query));
    } catch (const Error& e) {
      ExampleReport r;
      r.id = d.id;
      r.status = Expressibility::Failed;
      r.error = e.what();
      out.report.examples.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace iurkit
