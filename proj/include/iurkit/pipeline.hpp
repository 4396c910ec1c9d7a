#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "iurkit/datamodel.hpp"
#include "iurkit/querygen.hpp"
#include "iurkit/scoring.hpp"
#include "iurkit/supervision.hpp"

namespace iurkit {

// Dependency parses for the incomplete utterances of a corpus.
struct ParseSource {
  std::vector<ConlluSentence> sentences;
  bool heuristic = false;

  // A sentence whose sent_id equals the dialogue id wins; otherwise the
  // sentence at the dialogue's index when no sentence carries an id. Falls
  // back to the heuristic parser when enabled.
  std::optional<DependencyParse> find(const Dialogue& dialogue, std::size_t index) const;
};

enum class QueryMode { Gold, Lexicon };

struct QueryOptions {
  QueryMode mode = QueryMode::Gold;
  bool unify = true;
  EllipsisRules rules;
};

// Gold mode derives coreference markers from the gold rewrite and needs one.
QueryTemplate make_query(const Dialogue& dialogue, std::size_t index, const PronounLexicon& lexicon,
                         const ParseSource& parses, const QueryOptions& options);

struct PreparedCorpus {
  std::vector<TrainingExample> examples;  // fully and partially expressible only
  std::vector<QueryTemplate> queries;     // parallel to examples
  SupervisionReport report;               // one entry per dialogue
};

// Query, input sequence and edit matrix for every dialogue. Per-example user
// errors are recorded in the report as failures instead of thrown.
PreparedCorpus prepare_corpus(std::span<const Dialogue> dialogues, const PronounLexicon& lexicon,
                              const ParseSource& parses, const QueryOptions& options);

}  // namespace iurkit
