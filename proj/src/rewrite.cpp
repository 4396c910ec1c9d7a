#include "iurkit/rewrite.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <queue>

#include <nlohmann/json.hpp>

#include "iurkit/error.hpp"

namespace iurkit {

EditMatrix decode_labels(const ScoreGrid& grid, double theta) {
  const auto rows = static_cast<std::size_t>(grid.values.rows());
  const auto cols = static_cast<std::size_t>(grid.values.cols());
  EditMatrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      if (grid.op == EditOp::Substitute && j + 1 == cols) continue;
      if (grid.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= theta) out.add(i, j, grid.op);
    }
  return out;
}

EditMatrix decode_labels(const ScoreGrids& grids, double theta) {
  EditMatrix out(static_cast<std::size_t>(grids[0].values.rows()), static_cast<std::size_t>(grids[0].values.cols()));
  for (const auto& g : grids) {
    const auto part = decode_labels(g, theta);
    for (const auto& c : part.cells()) out.add(c.row, c.col, c.op);
  }
  return out;
}

EditMatrix restrict_to_history(const EditMatrix& labels, const InputSequence& input) {
  EditMatrix out(labels.rows(), labels.cols());
  for (const auto& c : labels.cells())
    if (input.history_range.contains(c.row)) out.add(c.row, c.col, c.op);
  return out;
}

namespace {

double cell_score(const ScoreGrids* grids, const EditCell& c) {
  if (!grids) return 1.0;
  return (*grids)[op_index(c.op)].values(static_cast<Eigen::Index>(c.row), static_cast<Eigen::Index>(c.col));
}

std::size_t anchor_col(const Anchor& a) {
  if (const auto* r = std::get_if<ReplaceAnchor>(&a)) return r->cols.begin;
  return std::get<InsertAnchor>(a).col;
}

}  // namespace

std::vector<EditSpan> cells_to_spans(const EditMatrix& labels, const ScoreGrids* grids) {
  std::vector<EditSpan> spans;

  // Substitute: connected components by flood fill.
  std::set<std::pair<std::size_t, std::size_t>> pending;
  for (const auto& c : labels.cells())
    if (c.op == EditOp::Substitute) pending.emplace(c.row, c.col);
  while (!pending.empty()) {
    std::queue<std::pair<std::size_t, std::size_t>> frontier;
    frontier.push(*pending.begin());
    pending.erase(pending.begin());
    std::size_t r0 = labels.rows(), r1 = 0, c0 = labels.cols(), c1 = 0, members = 0;
    double total = 0.0;
    while (!frontier.empty()) {
      const auto [r, c] = frontier.front();
      frontier.pop();
      ++members;
      total += cell_score(grids, {r, c, EditOp::Substitute});
      r0 = std::min(r0, r);
      r1 = std::max(r1, r + 1);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c + 1);
      const std::pair<std::size_t, std::size_t> next[] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& n : next) {
        if (auto it = pending.find(n); it != pending.end()) {
          frontier.push(n);
          pending.erase(it);
        }
      }
    }
    spans.push_back({EditOp::Substitute, {r0, r1}, ReplaceAnchor{{c0, c1}},
                     total / static_cast<double>(members), members != (r1 - r0) * (c1 - c0)});
  }

  // PreInsert: maximal row runs per column.
  std::map<std::size_t, std::vector<std::size_t>> by_col;
  for (const auto& c : labels.cells())
    if (c.op == EditOp::PreInsert) by_col[c.col].push_back(c.row);
  for (auto& [col, rows] : by_col) {
    std::sort(rows.begin(), rows.end());
    for (std::size_t k = 0; k < rows.size();) {
      auto end = k + 1;
      while (end < rows.size() && rows[end] == rows[end - 1] + 1) ++end;
      double total = 0.0;
      for (auto m = k; m < end; ++m) total += cell_score(grids, {rows[m], col, EditOp::PreInsert});
      spans.push_back({EditOp::PreInsert, {rows[k], rows[end - 1] + 1}, InsertAnchor{col},
                       total / static_cast<double>(end - k), false});
      k = end;
    }
  }

  std::stable_sort(spans.begin(), spans.end(), [](const EditSpan& a, const EditSpan& b) {
    return std::tuple(anchor_col(a.target), op_index(a.op), a.source_rows.begin) <
           std::tuple(anchor_col(b.target), op_index(b.op), b.source_rows.begin);
  });
  return spans;
}

std::vector<EditSpan> resolve_conflicts(std::vector<EditSpan> spans) {
  auto better = [](const EditSpan& a, const EditSpan& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.source_rows.begin < b.source_rows.begin;
  };
  std::vector<EditSpan> replaces;
  std::vector<EditSpan> inserts;
  for (auto& s : spans) (s.op == EditOp::Substitute ? replaces : inserts).push_back(std::move(s));
  std::stable_sort(replaces.begin(), replaces.end(), better);
  std::stable_sort(inserts.begin(), inserts.end(), better);

  std::vector<EditSpan> kept;
  std::vector<Interval> taken;
  for (auto& r : replaces) {
    const auto cols = std::get<ReplaceAnchor>(r.target).cols;
    if (std::none_of(taken.begin(), taken.end(), [&](const Interval& t) { return t.overlaps(cols); })) {
      taken.push_back(cols);
      kept.push_back(std::move(r));
    }
  }
  std::set<std::size_t> used_cols;
  for (auto& s : inserts) {
    const auto col = std::get<InsertAnchor>(s.target).col;
    const bool interior = std::any_of(taken.begin(), taken.end(),
                                      [&](const Interval& t) { return col > t.begin && col < t.end; });
    if (interior || !used_cols.insert(col).second) continue;
    kept.push_back(std::move(s));
  }
  std::sort(kept.begin(), kept.end(), [](const EditSpan& a, const EditSpan& b) {
    // Inserts precede the replacement anchored at the same column.
    return std::pair(anchor_col(a.target), a.op == EditOp::Substitute) <
           std::pair(anchor_col(b.target), b.op == EditOp::Substitute);
  });
  return kept;
}

Utterance apply_edits(const Utterance& incomplete, const std::vector<EditSpan>& spans, const InputSequence& input) {
  const auto n = incomplete.size();
  std::map<std::size_t, const EditSpan*> inserts;
  std::map<std::size_t, const EditSpan*> replaces;
  for (const auto& s : spans) {
    if (s.source_rows.empty() || s.source_rows.end > input.size())
      throw Error("edit span references rows [" + std::to_string(s.source_rows.begin) + ", " +
                  std::to_string(s.source_rows.end) + ") outside the input of length " + std::to_string(input.size()));
    if (const auto* r = std::get_if<ReplaceAnchor>(&s.target)) {
      if (r->cols.empty() || r->cols.end > n) throw Error("replace span outside the incomplete utterance");
      replaces[r->cols.begin] = &s;
    } else {
      const auto col = std::get<InsertAnchor>(s.target).col;
      if (col > n) throw Error("insert span beyond the sentinel column");
      inserts[col] = &s;
    }
  }

  Utterance out;
  out.speaker_turn = incomplete.speaker_turn;
  auto emit_rows = [&](const Interval& rows) {
    for (auto r = rows.begin; r < rows.end; ++r) out.tokens.push_back({input.tokens[r].text, 0, TokenRole::Incomplete});
  };
  for (std::size_t j = 0; j <= n;) {
    if (auto it = inserts.find(j); it != inserts.end()) emit_rows(it->second->source_rows);
    if (j == n) break;
    if (auto it = replaces.find(j); it != replaces.end()) {
      emit_rows(it->second->source_rows);
      j = std::get<ReplaceAnchor>(it->second->target).cols.end;
      // Inserts strictly inside the interval are skipped with it.
      continue;
    }
    out.tokens.push_back({incomplete.tokens[j].text, 0, TokenRole::Incomplete});
    ++j;
  }
  for (std::size_t i = 0; i < out.tokens.size(); ++i) out.tokens[i].position = i;
  return out;
}

nlohmann::json to_json(const EditSpan& span) {
  nlohmann::json j = {{"op", to_string(span.op)},
                      {"source_rows", {span.source_rows.begin, span.source_rows.end}},
                      {"score", span.score},
                      {"ragged", span.ragged}};
  if (const auto* r = std::get_if<ReplaceAnchor>(&span.target)) j["replace"] = {r->cols.begin, r->cols.end};
  else j["insert_before"] = std::get<InsertAnchor>(span.target).col;
  return j;
}

namespace {

std::string sig16(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.16g", v);
  return buf;
}

}  // namespace

nlohmann::json Diagnostics::to_json(bool with_grids) const {
  auto tokens = nlohmann::json::array();
  for (const auto& t : input.tokens) tokens.push_back(t.text);
  auto markers = nlohmann::json::array();
  for (const auto& m : query.markers) markers.push_back({{"position", m.position}, {"kind", to_string(m.kind)}});
  auto span_list = nlohmann::json::array();
  for (const auto& s : spans) span_list.push_back(iurkit::to_json(s));
  nlohmann::json j = {
      {"id", input.example_id},
      {"query", query.texts()},
      {"query_kind", to_string(query.kind_summary)},
      {"markers", std::move(markers)},
      {"input_tokens", std::move(tokens)},
      {"ranges",
       {{"query", {input.query_range.begin, input.query_range.end}},
        {"history", {input.history_range.begin, input.history_range.end}},
        {"incomplete", {input.incomplete_range.begin, input.incomplete_range.end}},
        {"sentinel", input.sentinel_index}}},
      {"labels", labels.to_json()},
      {"spans", std::move(span_list)},
  };
  if (with_grids) {
    nlohmann::json g = nlohmann::json::object();
    for (const auto& grid : grids) {
      auto rows = nlohmann::json::array();
      for (Eigen::Index i = 0; i < grid.values.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < grid.values.cols(); ++c) row.push_back(sig16(grid.values(i, c)));
        rows.push_back(std::move(row));
      }
      g[std::string(to_string(grid.op))] = std::move(rows);
    }
    j["grids"] = std::move(g);
  }
  return j;
}

RewriteResult rewrite_with_query(const Dialogue& dialogue, const QueryTemplate& query, const ModelParams& model,
                                 double theta, const ContextVectors* imported) {
  RewriteResult res;
  auto& diag = res.diagnostics;
  diag.query = query;
  diag.input = build_input_sequence(query, dialogue);
  diag.grids = score(diag.input, model, imported);
  diag.labels = restrict_to_history(decode_labels(diag.grids, theta), diag.input);
  diag.spans = resolve_conflicts(cells_to_spans(diag.labels, &diag.grids));
  res.output = apply_edits(dialogue.incomplete, diag.spans, diag.input);
  return res;
}

RewriteResult rewrite(const Dialogue& dialogue, const ModelParams& model, double theta, const PronounLexicon& lexicon,
                      const DependencyParse* parse, const RewriteOptions& options) {
  const auto query = build_query(dialogue.incomplete, lexicon, parse, options.unify, options.ellipsis_rules);
  return rewrite_with_query(dialogue, query, model, theta, options.imported);
}

}  // namespace iurkit
