#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iurkit/datamodel.hpp"
#include "iurkit/querygen.hpp"
#include "iurkit/scoring.hpp"
#include "iurkit/supervision.hpp"

namespace iurkit {

struct EditSpan {
  EditOp op = EditOp::Substitute;
  Interval source_rows;
  Anchor target;
  double score = 0.0;   // mean score of the member cells
  bool ragged = false;  // member cells did not fill the bounding box
};

// Labels every cell with s >= theta. Substitute cells on the sentinel column
// are never labeled.
EditMatrix decode_labels(const ScoreGrid& grid, double theta);
EditMatrix decode_labels(const ScoreGrids& grids, double theta);

// Drops labels whose source row lies outside the history region.
EditMatrix restrict_to_history(const EditMatrix& labels, const InputSequence& input);

// Substitute cells: 4-connected components, each replaced by its bounding box.
// PreInsert cells: maximal row runs per column. Scores come from `grids`
// when given, otherwise every span scores 1.
std::vector<EditSpan> cells_to_spans(const EditMatrix& labels, const ScoreGrids* grids = nullptr);

// Overlapping replacements and same-column inserts keep the best mean score
// (ties: lower source row). Inserts strictly inside a kept replacement drop.
std::vector<EditSpan> resolve_conflicts(std::vector<EditSpan> spans);

// Walks columns left to right: inserts anchored at the column first, then the
// replacement starting there (skipping its interval) or the original token.
Utterance apply_edits(const Utterance& incomplete, const std::vector<EditSpan>& spans, const InputSequence& input);

nlohmann::json to_json(const EditSpan& span);

struct Diagnostics {
  QueryTemplate query;
  InputSequence input;
  ScoreGrids grids;
  EditMatrix labels;
  std::vector<EditSpan> spans;

  // Grids are included as 16-significant-digit strings when requested.
  nlohmann::json to_json(bool with_grids) const;
};

struct RewriteOptions {
  bool unify = true;
  const ContextVectors* imported = nullptr;
  EllipsisRules ellipsis_rules;
};

struct RewriteResult {
  Utterance output;
  Diagnostics diagnostics;
};

// build_query -> build_input_sequence -> score -> decode_labels ->
// cells_to_spans -> resolve_conflicts -> apply_edits.
RewriteResult rewrite(const Dialogue& dialogue, const ModelParams& model, double theta,
                      const PronounLexicon& lexicon, const DependencyParse* parse,
                      const RewriteOptions& options = {});

// Same pipeline from an already-built query.
RewriteResult rewrite_with_query(const Dialogue& dialogue, const QueryTemplate& query, const ModelParams& model,
                                 double theta, const ContextVectors* imported = nullptr);

}  // namespace iurkit
