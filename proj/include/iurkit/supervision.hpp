#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iurkit/datamodel.hpp"

namespace iurkit {

enum class EditOp { Substitute, PreInsert };
inline constexpr std::array<EditOp, 2> kEditOps = {EditOp::Substitute, EditOp::PreInsert};

inline std::size_t op_index(EditOp op) { return op == EditOp::Substitute ? 0 : 1; }
std::string_view to_string(EditOp op);
char op_code(EditOp op);  // 'S' or 'I'

struct EditCell {
  std::size_t row = 0;
  std::size_t col = 0;
  EditOp op = EditOp::Substitute;

  friend auto operator<=>(const EditCell&, const EditCell&) = default;
};

// Sparse labels over context rows × (incomplete columns + sentinel column).
class EditMatrix {
public:
  EditMatrix() = default;
  EditMatrix(std::size_t rows, std::size_t cols);

  // Throws InvariantError for out-of-range cells and Substitute cells on the
  // sentinel column. Duplicates are ignored.
  void add(std::size_t row, std::size_t col, EditOp op);
  bool contains(std::size_t row, std::size_t col, EditOp op) const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t sentinel_column() const { return cols_ - 1; }
  const std::set<EditCell>& cells() const { return cells_; }
  std::size_t count(EditOp op) const;
  bool empty() const { return cells_.empty(); }

  // {"rows":R,"cols":C,"cells":[[r,c,"S"|"I"],...]}
  nlohmann::json to_json() const;
  static EditMatrix from_json(const nlohmann::json& j);

  friend bool operator==(const EditMatrix&, const EditMatrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 1;
  std::set<EditCell> cells_;
};

struct ReplaceAnchor {
  Interval cols;
  friend bool operator==(const ReplaceAnchor&, const ReplaceAnchor&) = default;
};
struct InsertAnchor {
  std::size_t col = 0;  // may be the sentinel column
  friend bool operator==(const InsertAnchor&, const InsertAnchor&) = default;
};
using Anchor = std::variant<ReplaceAnchor, InsertAnchor>;

// A run of rewritten tokens that is not part of the LCS alignment.
struct AddedSpan {
  std::vector<std::string> tokens;
  Interval rewritten;  // where the run sits in the rewritten utterance
  Anchor anchor;
};

using Alignment = std::vector<std::pair<std::size_t, std::size_t>>;

// Maximum monotone matching of equal texts. Among optimal alignments the walk
// from the front prefers match, then skipping an `a` token, then skipping a `b`
// token.
Alignment lcs_align(const std::vector<std::string>& a, const std::vector<std::string>& b);
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct DiffResult {
  std::vector<AddedSpan> spans;
  // Incomplete intervals dropped without replacement; two edit operations
  // cannot express these.
  std::vector<Interval> deletions;
};

DiffResult diff_spans(const Utterance& incomplete, const Utterance& rewritten, const Alignment& alignment);
DiffResult diff_spans(const Utterance& incomplete, const Utterance& rewritten);

// Searches history turns latest first, left to right within a turn, for an
// exact contiguous match that does not cross turn boundaries. Returns absolute
// rows in the input sequence.
std::optional<Interval> locate_in_context(const std::vector<std::string>& span, const InputSequence& input);

// Incomplete intervals the gold rewrite replaces; drives training-time
// coreference templates.
std::vector<Interval> gold_coref_intervals(const Dialogue& dialogue);

// Surface forms of gold-replaced incomplete phrases across a corpus, for
// augmenting the pronoun lexicon.
std::vector<std::string> harvest_referential_phrases(const std::vector<Dialogue>& dialogues);

enum class Expressibility { Full, Partial, Failed };
std::string_view to_string(Expressibility e);

struct ExampleReport {
  std::string id;
  Expressibility status = Expressibility::Full;
  std::vector<std::string> skipped_spans;  // added text not found in history
  std::vector<std::string> deletions;      // incomplete text dropped by the rewrite
  std::size_t substitute_cells = 0;
  std::size_t insert_cells = 0;
  std::string error;  // set when the example could not be processed at all
};

struct SupervisionReport {
  std::vector<ExampleReport> examples;

  std::size_t count(Expressibility e) const;
  nlohmann::json to_json() const;
};

struct Supervision {
  EditMatrix matrix;
  ExampleReport report;
};

// Throws iurkit::Error when the dialogue has no gold rewrite.
Supervision build_edit_matrix(const Dialogue& dialogue, const InputSequence& input);

}  // namespace iurkit
