#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "iurkit/datamodel.hpp"
#include "iurkit/supervision.hpp"

namespace iurkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class EncoderMode { TrainableEmbedding, ImportedVectors };
std::string_view to_string(EncoderMode mode);
std::optional<EncoderMode> parse_encoder_mode(std::string_view text);

// Token ids. Id 0 is the reserved unknown entry; every other word maps to its
// index in construction order.
class Vocabulary {
public:
  static constexpr std::string_view kUnknown = "<unk>";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);
  // Sorted unique token texts of the given inputs.
  static Vocabulary build(std::span<const InputSequence> inputs);

  std::size_t id(const std::string& text) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> ids_;
};

// Segments fed to the encoder in place of separator tokens: query, incomplete,
// sentinel, then history turns counted back from the latest (clipped).
inline constexpr std::size_t kSegmentCount = 16;
std::vector<std::size_t> segment_ids(const InputSequence& input);

struct ModelShape {
  std::size_t d_model = 32;
  std::size_t d_head = 16;
  std::size_t heads = 1;
  std::size_t d_ff = 64;
  bool mixer = true;
  EncoderMode mode = EncoderMode::TrainableEmbedding;

  std::size_t head_width() const { return d_head * heads; }
  // Throws iurkit::Error for odd or zero widths.
  void validate() const;
};

// One self-attention + feed-forward block, residual on both.
struct MixerParams {
  Matrix wq, wk, wv, wo;  // d_model × d_model
  Matrix ff1;             // d_ff × d_model
  Vector ff1_bias;        // d_ff
  Matrix ff2;             // d_model × d_ff
  Vector ff2_bias;        // d_model
};

struct EncoderParams {
  EncoderMode mode = EncoderMode::TrainableEmbedding;
  Vocabulary vocab;
  Matrix embedding;  // |V| × d_model, empty for imported vectors
  Matrix segments;   // kSegmentCount × d_model
  std::optional<MixerParams> mixer;
};

// q-side and k-side projections for one edit operation. Rows are the heads'
// d_head blocks stacked.
struct OpHeadParams {
  Matrix wq, wk;  // head_width × d_model
  Vector bq, bk;  // head_width
};

struct HeadParams {
  std::array<OpHeadParams, 2> ops;  // indexed by op_index()
};

struct ModelParams {
  ModelShape shape;
  EncoderParams encoder;
  HeadParams head;

  static ModelParams zeros(const ModelShape& shape, const Vocabulary& vocab);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, values
  // rounded to 32-bit floats so that the model file is an exact snapshot.
  static ModelParams initialize(const ModelShape& shape, const Vocabulary& vocab, std::uint64_t seed);
  ModelParams zeros_like() const;
};

struct TensorRef {
  std::string name;
  double* data;
  std::size_t rows;
  std::size_t cols;
  bool trainable;
  std::size_t size() const { return rows * cols; }
};

// Every tensor in declaration order. Data is column-major (Eigen default).
std::vector<TensorRef> tensors(ModelParams& params);

// Per-example contextual vectors produced by an external encoder.
class ContextVectors {
public:
  explicit ContextVectors(std::size_t d_model = 0) : d_model_(d_model) {}

  void insert(const std::string& id, Matrix vectors);  // rows = input positions
  const Matrix* find(const std::string& id) const;
  std::size_t d_model() const { return d_model_; }
  std::size_t size() const { return records_.size(); }

  // Layout: u32 header length, JSON header {"d_model","count"}, then per record
  // u32 id length, id bytes, u32 position count, count*d_model float32. All
  // integers and floats little-endian.
  void write(std::ostream& out) const;
  static ContextVectors read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static ContextVectors load(const std::filesystem::path& path);

private:
  std::size_t d_model_;
  std::map<std::string, Matrix> records_;
};

// One row per input position, sentinel included.
Matrix encode(const InputSequence& input, const EncoderParams& params, const ContextVectors* imported = nullptr);

struct Projection {
  Matrix q;  // context rows × head_width
  Matrix k;  // columns × head_width
};

Projection project(const Matrix& context_h, const Matrix& column_h, const HeadParams& head, EditOp op);

// Rotates each (2m, 2m+1) pair by pos * 10000^(-2m/block), independently per
// `block`-wide chunk. block defaults to v.size().
Vector rope_rotate(const Vector& v, double pos, std::size_t block = 0);

struct ScoreGrid {
  EditOp op = EditOp::Substitute;
  Matrix values;  // context rows × (incomplete + sentinel)
};
using ScoreGrids = std::array<ScoreGrid, 2>;

// values(i, j) = <R(row_pos[i]) q_i, R(col_pos[j]) k_j>, rotations per d_head block.
ScoreGrid score_grid(const Matrix& q, const Matrix& k, std::span<const double> row_positions,
                     std::span<const double> col_positions, EditOp op, std::size_t d_head);

// log(1 + sum_pos e^{-s}) + log(1 + sum_neg e^{s}) for one grid; `grad`
// receives dL/ds when non-null.
double circle_loss(const Matrix& scores, const EditMatrix& gold, EditOp op, Matrix* grad = nullptr);
double circle_loss(const ScoreGrids& grids, const EditMatrix& gold);

// Full forward pass.
ScoreGrids score(const InputSequence& input, const ModelParams& params, const ContextVectors* imported = nullptr);

struct TrainingExample {
  InputSequence input;
  EditMatrix gold;
};

struct Gradient {
  double loss = 0.0;  // mean over the batch
  ModelParams grad;
};

// Exact reverse-mode gradient of the mean batch loss. Throws iurkit::Error
// naming the example when a loss is not finite.
Gradient grad(const ModelParams& params, std::span<const TrainingExample> batch,
              const ContextVectors* imported = nullptr, std::size_t workers = 1);

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  double theta = 0.1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t workers = 1;

  void validate() const;
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
  std::uint64_t epochs_done = 0;

  static AdamState for_params(const ModelParams& params);
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> dev_em;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  nlohmann::json to_json() const;
};

using DevEvaluator = std::function<double(const ModelParams&)>;

// Adam with bias correction over batches shuffled per epoch from the seed.
// Continues from state.epochs_done up to config.epochs. Parameters and moments
// are kept at 32-bit precision after every step.
TrainingLog train(std::span<const TrainingExample> dataset, const TrainConfig& config, ModelParams& params,
                  AdamState& state, const ContextVectors* imported = nullptr, const DevEvaluator& dev = {});

// Model file: 8-byte magic "IURKITMD", u64 header length, JSON header (shape,
// mode, vocab, tensor list, optional optimizer counters), then each tensor as
// row-major little-endian float32 in header order.
void save_model(const std::filesystem::path& path, const ModelParams& params, const AdamState* adam = nullptr);
void write_model(std::ostream& out, const ModelParams& params, const AdamState* adam = nullptr);

struct LoadedModel {
  ModelParams params;
  std::optional<AdamState> adam;
};
LoadedModel load_model(const std::filesystem::path& path);
LoadedModel read_model(std::istream& in);

}  // namespace iurkit
