#include "iurkit/supervision.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "iurkit/error.hpp"
#include "iurkit/rewrite.hpp"

namespace iurkit {

std::string_view to_string(EditOp op) { return op == EditOp::Substitute ? "substitute" : "pre-insert"; }
char op_code(EditOp op) { return op == EditOp::Substitute ? 'S' : 'I'; }

// ---------------------------------------------------------------- EditMatrix

EditMatrix::EditMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  if (cols == 0) throw InvariantError("edit matrix needs at least the sentinel column");
}

void EditMatrix::add(std::size_t row, std::size_t col, EditOp op) {
  if (row >= rows_ || col >= cols_)
    throw InvariantError("edit cell (" + std::to_string(row) + ", " + std::to_string(col) +
                         ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
  if (op == EditOp::Substitute && col == sentinel_column())
    throw InvariantError("substitute cell on the sentinel column");
  cells_.insert({row, col, op});
}

bool EditMatrix::contains(std::size_t row, std::size_t col, EditOp op) const {
  return cells_.count({row, col, op}) > 0;
}

std::size_t EditMatrix::count(EditOp op) const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [op](const EditCell& c) { return c.op == op; }));
}

nlohmann::json EditMatrix::to_json() const {
  auto cells = nlohmann::json::array();
  for (const auto& c : cells_) cells.push_back({c.row, c.col, std::string(1, op_code(c.op))});
  return {{"rows", rows_}, {"cols", cols_}, {"cells", std::move(cells)}};
}

EditMatrix EditMatrix::from_json(const nlohmann::json& j) {
  try {
    EditMatrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    for (const auto& c : j.at("cells")) {
      const auto code = c.at(2).get<std::string>();
      if (code != "S" && code != "I") throw Error("edit cell op must be \"S\" or \"I\"");
      m.add(c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>(),
            code == "S" ? EditOp::Substitute : EditOp::PreInsert);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed edit matrix JSON: ") + e.what());
  } catch (const InvariantError& e) {
    throw Error(std::string("malformed edit matrix JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------- LCS

namespace {

// suffix[i][j] = LCS length of a[i..) and b[j..), stored row-major.
std::vector<std::size_t> suffix_table(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto n = a.size();
  const auto m = b.size();
  std::vector<std::size_t> t((n + 1) * (m + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return t[i * (m + 1) + j]; };
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      at(i, j) = a[i] == b[j] ? at(i + 1, j + 1) + 1 : std::max(at(i + 1, j), at(i, j + 1));
  return t;
}

}  // namespace

Alignment lcs_align(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto n = a.size();
  const auto m = b.size();
  const auto t = suffix_table(a, b);
  auto at = [&](std::size_t i, std::size_t j) { return t[i * (m + 1) + j]; };
  Alignment out;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n && j < m) {
    if (a[i] == b[j]) {
      out.emplace_back(i++, j++);
    } else if (at(i + 1, j) >= at(i, j + 1)) {
      ++i;
    } else {
      ++j;
    }
  }
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return suffix_table(a, b)[0];
}

// ---------------------------------------------------------------- diff

DiffResult diff_spans(const Utterance& incomplete, const Utterance& rewritten, const Alignment& alignment) {
  const auto n = incomplete.size();
  const auto m = rewritten.size();
  DiffResult out;

  // Walk consecutive alignment pairs with virtual anchors before and after.
  std::size_t prev_a = 0;
  std::size_t prev_b = 0;
  for (std::size_t k = 0; k <= alignment.size(); ++k) {
    const auto next_a = k < alignment.size() ? alignment[k].first : n;
    const auto next_b = k < alignment.size() ? alignment[k].second : m;
    if (next_a < prev_a || next_b < prev_b) throw InvariantError("alignment is not monotone");
    const Interval gap_a{prev_a, next_a};
    const Interval gap_b{prev_b, next_b};
    if (!gap_b.empty()) {
      AddedSpan span;
      for (auto j = gap_b.begin; j < gap_b.end; ++j) span.tokens.push_back(rewritten.tokens[j].text);
      span.rewritten = gap_b;
      if (gap_a.empty()) span.anchor = InsertAnchor{next_a};
      else span.anchor = ReplaceAnchor{gap_a};
      out.spans.push_back(std::move(span));
    } else if (!gap_a.empty()) {
      out.deletions.push_back(gap_a);
    }
    prev_a = next_a + 1;
    prev_b = next_b + 1;
  }
  return out;
}

DiffResult diff_spans(const Utterance& incomplete, const Utterance& rewritten) {
  return diff_spans(incomplete, rewritten, lcs_align(incomplete.texts(), rewritten.texts()));
}

std::optional<Interval> locate_in_context(const std::vector<std::string>& span, const InputSequence& input) {
  if (span.empty()) throw InvariantError("locate_in_context called with an empty span");
  for (auto turn = input.history_turns.rbegin(); turn != input.history_turns.rend(); ++turn) {
    if (turn->size() < span.size()) continue;
    for (auto start = turn->begin; start + span.size() <= turn->end; ++start) {
      bool hit = true;
      for (std::size_t k = 0; k < span.size() && hit; ++k) hit = input.tokens[start + k].text == span[k];
      if (hit) return Interval{start, start + span.size()};
    }
  }
  return std::nullopt;
}

std::vector<Interval> gold_coref_intervals(const Dialogue& dialogue) {
  if (!dialogue.rewritten) return {};
  std::vector<Interval> out;
  for (const auto& span : diff_spans(dialogue.incomplete, *dialogue.rewritten).spans)
    if (const auto* r = std::get_if<ReplaceAnchor>(&span.anchor)) out.push_back(r->cols);
  return out;
}

std::vector<std::string> harvest_referential_phrases(const std::vector<Dialogue>& dialogues) {
  std::set<std::string> found;
  for (const auto& d : dialogues) {
    for (const auto& iv : gold_coref_intervals(d)) {
      std::vector<std::string> texts;
      for (auto i = iv.begin; i < iv.end; ++i) texts.push_back(d.incomplete.tokens[i].text);
      found.insert(detokenize(texts, d.mode()));
    }
  }
  return {found.begin(), found.end()};
}

// ---------------------------------------------------------------- matrices

std::string_view to_string(Expressibility e) {
  switch (e) {
    case Expressibility::Full: return "full";
    case Expressibility::Partial: return "partial";
    case Expressibility::Failed: return "failed";
  }
  return "?";
}

std::size_t SupervisionReport::count(Expressibility e) const {
  return static_cast<std::size_t>(std::count_if(examples.begin(), examples.end(),
                                                [e](const ExampleReport& r) { return r.status == e; }));
}

nlohmann::json SupervisionReport::to_json() const {
  auto items = nlohmann::json::array();
  for (const auto& r : examples) {
    nlohmann::json item = {{"id", r.id},
                           {"status", to_string(r.status)},
                           {"substitute_cells", r.substitute_cells},
                           {"insert_cells", r.insert_cells},
                           {"skipped_spans", r.skipped_spans},
                           {"deletions", r.deletions}};
    if (!r.error.empty()) item["error"] = r.error;
    items.push_back(std::move(item));
  }
  return {{"full", count(Expressibility::Full)},
          {"partial", count(Expressibility::Partial)},
          {"failed", count(Expressibility::Failed)},
          {"examples", std::move(items)}};
}

Supervision build_edit_matrix(const Dialogue& dialogue, const InputSequence& input) {
  if (!dialogue.rewritten) throw Error("example " + dialogue.id + " has no gold rewritten utterance");
  const auto& inc = dialogue.incomplete;
  const auto& rew = *dialogue.rewritten;
  if (input.incomplete_range.size() != inc.size())
    throw InvariantError("input sequence does not match the dialogue's incomplete utterance");

  Supervision out{EditMatrix(input.context_rows(), input.column_count()), {}};
  out.report.id = dialogue.id;
  const auto diff = diff_spans(inc, rew);
  const auto mode = dialogue.mode();

  for (const auto& span : diff.spans) {
    const auto rows = locate_in_context(span.tokens, input);
    if (!rows) {
      out.report.skipped_spans.push_back(detokenize(span.tokens, mode));
      continue;
    }
    for (auto r = rows->begin; r < rows->end; ++r) {
      if (const auto* rep = std::get_if<ReplaceAnchor>(&span.anchor)) {
        for (auto c = rep->cols.begin; c < rep->cols.end; ++c) out.matrix.add(r, c, EditOp::Substitute);
      } else {
        out.matrix.add(r, std::get<InsertAnchor>(span.anchor).col, EditOp::PreInsert);
      }
    }
  }
  for (const auto& del : diff.deletions) {
    std::vector<std::string> texts;
    for (auto i = del.begin; i < del.end; ++i) texts.push_back(inc.tokens[i].text);
    out.report.deletions.push_back(detokenize(texts, mode));
  }
  out.report.substitute_cells = out.matrix.count(EditOp::Substitute);
  out.report.insert_cells = out.matrix.count(EditOp::PreInsert);

  const auto replay = apply_edits(inc, resolve_conflicts(cells_to_spans(out.matrix)), input);
  if (replay.texts() == rew.texts()) out.report.status = Expressibility::Full;
  else if (out.matrix.empty()) out.report.status = Expressibility::Failed;
  else out.report.status = Expressibility::Partial;
  return out;
}

}  // namespace iurkit
