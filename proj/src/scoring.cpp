#include "iurkit/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <set>
#include <thread>

#include "iurkit/error.hpp"

namespace iurkit {

// ---------------------------------------------------------------- vocabulary

std::string_view to_string(EncoderMode mode) {
  return mode == EncoderMode::TrainableEmbedding ? "trainable-embedding" : "imported-vectors";
}

std::optional<EncoderMode> parse_encoder_mode(std::string_view text) {
  if (text == "trainable-embedding") return EncoderMode::TrainableEmbedding;
  if (text == "imported-vectors") return EncoderMode::ImportedVectors;
  return std::nullopt;
}

Vocabulary::Vocabulary() : words_{std::string(kUnknown)} { ids_.emplace(kUnknown, 0); }

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
  for (const auto& w : words) {
    if (ids_.count(w)) continue;
    ids_.emplace(w, words_.size());
    words_.push_back(w);
  }
}

Vocabulary Vocabulary::build(std::span<const InputSequence> inputs) {
  std::set<std::string> seen;
  for (const auto& in : inputs)
    for (const auto& t : in.tokens) seen.insert(t.text);
  seen.erase(std::string(kUnknown));
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
}

std::size_t Vocabulary::id(const std::string& text) const {
  auto it = ids_.find(text);
  return it == ids_.end() ? 0 : it->second;
}

std::vector<std::size_t> segment_ids(const InputSequence& input) {
  std::vector<std::size_t> seg(input.size(), 0);
  for (auto i = input.incomplete_range.begin; i < input.incomplete_range.end; ++i) seg[i] = 1;
  seg[input.sentinel_index] = 2;
  const auto turns = input.history_turns.size();
  for (std::size_t t = 0; t < turns; ++t) {
    const auto back = turns - 1 - t;  // 0 = latest turn
    const auto id = std::min<std::size_t>(3 + back, kSegmentCount - 1);
    for (auto i = input.history_turns[t].begin; i < input.history_turns[t].end; ++i) seg[i] = id;
  }
  return seg;
}

// ---------------------------------------------------------------- parameters

void ModelShape::validate() const {
  if (d_model == 0 || d_model % 2 != 0) throw Error("d_model must be positive and even");
  if (d_head == 0 || d_head % 2 != 0) throw Error("d_head must be positive and even");
  if (heads == 0) throw Error("heads must be positive");
  if (mixer && d_ff == 0) throw Error("d_ff must be positive when the mixer is enabled");
}

namespace {

template <class Params, class Fn>
void visit_tensors(Params& p, Fn&& fn) {
  const bool embed = p.shape.mode == EncoderMode::TrainableEmbedding;
  fn("encoder.embedding", p.encoder.embedding, embed);
  fn("encoder.segments", p.encoder.segments, true);
  if (p.encoder.mixer) {
    auto& m = *p.encoder.mixer;
    fn("mixer.wq", m.wq, true);
    fn("mixer.wk", m.wk, true);
    fn("mixer.wv", m.wv, true);
    fn("mixer.wo", m.wo, true);
    fn("mixer.ff1", m.ff1, true);
    fn("mixer.ff1_bias", m.ff1_bias, true);
    fn("mixer.ff2", m.ff2, true);
    fn("mixer.ff2_bias", m.ff2_bias, true);
  }
  for (auto op : kEditOps) {
    auto& h = p.head.ops[op_index(op)];
    const std::string prefix = op == EditOp::Substitute ? "head.substitute." : "head.insert.";
    fn(prefix + "wq", h.wq, true);
    fn(prefix + "bq", h.bq, true);
    fn(prefix + "wk", h.wk, true);
    fn(prefix + "bk", h.bk, true);
  }
}

// Portable uniform draw: mt19937_64 is fully specified, the distribution
// classes are not.
double uniform(std::mt19937_64& rng, double bound) {
  const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return static_cast<double>(static_cast<float>((2.0 * unit - 1.0) * bound));
}

template <class Derived>
void fill_uniform(Eigen::PlainObjectBase<Derived>& m, std::mt19937_64& rng, double bound) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = uniform(rng, bound);
}

}  // namespace

ModelParams ModelParams::zeros(const ModelShape& shape, const Vocabulary& vocab) {
  shape.validate();
  const auto d = static_cast<Eigen::Index>(shape.d_model);
  const auto w = static_cast<Eigen::Index>(shape.head_width());
  const auto ff = static_cast<Eigen::Index>(shape.d_ff);
  ModelParams p;
  p.shape = shape;
  p.encoder.mode = shape.mode;
  p.encoder.vocab = vocab;
  if (shape.mode == EncoderMode::TrainableEmbedding)
    p.encoder.embedding = Matrix::Zero(static_cast<Eigen::Index>(vocab.size()), d);
  p.encoder.segments = Matrix::Zero(kSegmentCount, d);
  if (shape.mixer) {
    MixerParams m;
    m.wq = m.wk = m.wv = m.wo = Matrix::Zero(d, d);
    m.ff1 = Matrix::Zero(ff, d);
    m.ff1_bias = Vector::Zero(ff);
    m.ff2 = Matrix::Zero(d, ff);
    m.ff2_bias = Vector::Zero(d);
    p.encoder.mixer = std::move(m);
  }
  for (auto& h : p.head.ops) {
    h.wq = h.wk = Matrix::Zero(w, d);
    h.bq = h.bk = Vector::Zero(w);
  }
  return p;
}

ModelParams ModelParams::initialize(const ModelShape& shape, const Vocabulary& vocab, std::uint64_t seed) {
  auto p = zeros(shape, vocab);
  std::mt19937_64 rng(seed);
  const double bd = 1.0 / std::sqrt(static_cast<double>(shape.d_model));
  fill_uniform(p.encoder.embedding, rng, bd);
  fill_uniform(p.encoder.segments, rng, bd);
  if (p.encoder.mixer) {
    auto& m = *p.encoder.mixer;
    for (auto* w : {&m.wq, &m.wk, &m.wv, &m.wo, &m.ff1}) fill_uniform(*w, rng, bd);
    fill_uniform(m.ff2, rng, 1.0 / std::sqrt(static_cast<double>(shape.d_ff)));
  }
  for (auto& h : p.head.ops) {
    fill_uniform(h.wq, rng, bd);
    fill_uniform(h.wk, rng, bd);
  }
  return p;
}

ModelParams ModelParams::zeros_like() const { return zeros(shape, encoder.vocab); }

std::vector<TensorRef> tensors(ModelParams& params) {
  std::vector<TensorRef> out;
  visit_tensors(params, [&](const std::string& name, auto& t, bool trainable) {
    out.push_back({name, t.data(), static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols()),
                   trainable});
  });
  return out;
}

// ---------------------------------------------------------------- RoPE

namespace {

// Rotation table for a set of positions: cos/sin per (position, frequency).
struct RopeTable {
  Matrix cos;  // n × block/2
  Matrix sin;
  std::size_t block = 0;

  RopeTable(std::span<const double> positions, std::size_t block_width) : block(block_width) {
    const auto n = static_cast<Eigen::Index>(positions.size());
    const auto half = static_cast<Eigen::Index>(block / 2);
    cos.resize(n, half);
    sin.resize(n, half);
    for (Eigen::Index m = 0; m < half; ++m) {
      const double omega = std::pow(10000.0, -2.0 * static_cast<double>(m) / static_cast<double>(block));
      for (Eigen::Index i = 0; i < n; ++i) {
        const double angle = positions[static_cast<std::size_t>(i)] * omega;
        cos(i, m) = std::cos(angle);
        sin(i, m) = std::sin(angle);
      }
    }
  }

  // Rotates each row by its position; `inverse` applies the transpose.
  Matrix apply(const Matrix& x, bool inverse = false) const {
    Matrix out(x.rows(), x.cols());
    const auto half = cos.cols();
    const double sign = inverse ? -1.0 : 1.0;
    for (Eigen::Index base = 0; base < x.cols(); base += static_cast<Eigen::Index>(block)) {
      for (Eigen::Index m = 0; m < half; ++m) {
        const auto c0 = base + 2 * m;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          const double a = x(i, c0);
          const double b = x(i, c0 + 1);
          const double cs = cos(i, m);
          const double sn = sign * sin(i, m);
          out(i, c0) = a * cs - b * sn;
          out(i, c0 + 1) = a * sn + b * cs;
        }
      }
    }
    return out;
  }
};

std::vector<double> iota_positions(std::size_t begin, std::size_t count) {
  std::vector<double> p(count);
  for (std::size_t i = 0; i < count; ++i) p[i] = static_cast<double>(begin + i);
  return p;
}

}  // namespace

Vector rope_rotate(const Vector& v, double pos, std::size_t block) {
  if (block == 0) block = static_cast<std::size_t>(v.size());
  if (block % 2 != 0 || v.size() % static_cast<Eigen::Index>(block) != 0)
    throw Error("rope_rotate needs an even block that divides the vector width");
  const double positions[] = {pos};
  RopeTable table(positions, block);
  Matrix row = v.transpose();
  return table.apply(row).row(0).transpose();
}

ScoreGrid score_grid(const Matrix& q, const Matrix& k, std::span<const double> row_positions,
                     std::span<const double> col_positions, EditOp op, std::size_t d_head) {
  if (static_cast<std::size_t>(q.rows()) != row_positions.size() ||
      static_cast<std::size_t>(k.rows()) != col_positions.size() || q.cols() != k.cols())
    throw InvariantError("score_grid: shape mismatch");
  const RopeTable rows(row_positions, d_head);
  const RopeTable cols(col_positions, d_head);
  return {op, rows.apply(q) * cols.apply(k).transpose()};
}

// ---------------------------------------------------------------- loss

namespace {

// log(1 + sum exp(x_i)) with the max shifted out.
double log1p_sum_exp(const std::vector<double>& xs) {
  double mx = 0.0;
  for (double x : xs) mx = std::max(mx, x);
  double acc = std::exp(-mx);
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

}  // namespace

double circle_loss(const Matrix& scores, const EditMatrix& gold, EditOp op, Matrix* grad) {
  if (static_cast<std::size_t>(scores.rows()) != gold.rows() || static_cast<std::size_t>(scores.cols()) != gold.cols())
    throw InvariantError("circle_loss: grid and gold dimensions differ");
  const auto R = scores.rows();
  const auto C = scores.cols();
  std::vector<double> pos_terms;
  std::vector<double> neg_terms;
  pos_terms.reserve(gold.count(op));
  neg_terms.reserve(static_cast<std::size_t>(R * C));
  for (Eigen::Index i = 0; i < R; ++i)
    for (Eigen::Index j = 0; j < C; ++j) {
      if (gold.contains(static_cast<std::size_t>(i), static_cast<std::size_t>(j), op))
        pos_terms.push_back(-scores(i, j));
      else
        neg_terms.push_back(scores(i, j));
    }
  const double lse_pos = log1p_sum_exp(pos_terms);
  const double lse_neg = log1p_sum_exp(neg_terms);
  if (grad) {
    grad->resize(R, C);
    for (Eigen::Index i = 0; i < R; ++i)
      for (Eigen::Index j = 0; j < C; ++j) {
        const double s = scores(i, j);
        (*grad)(i, j) = gold.contains(static_cast<std::size_t>(i), static_cast<std::size_t>(j), op)
                            ? -std::exp(-s - lse_pos)
                            : std::exp(s - lse_neg);
      }
  }
  return lse_pos + lse_neg;
}

double circle_loss(const ScoreGrids& grids, const EditMatrix& gold) {
  double total = 0.0;
  for (const auto& g : grids) total += circle_loss(g.values, gold, g.op);
  return total;
}

// ---------------------------------------------------------------- forward/backward

namespace {

struct MixerCache {
  Matrix x;          // block input
  Matrix kr, qr, v;  // rotated query/key, values
  Matrix p;          // attention weights
  Matrix o;          // attention output
  Matrix y;          // after attention residual
  Matrix f;          // tanh activations
};

struct Forward {
  std::vector<std::size_t> ids;
  std::vector<std::size_t> segs;
  std::optional<MixerCache> mixer;
  Matrix h;  // encoder output
  std::size_t rows = 0;
  std::size_t col_begin = 0;
  std::size_t cols = 0;
  std::array<Matrix, 2> qr, kr;  // rotated projections per op
  ScoreGrids grids;
};

Matrix base_vectors(const InputSequence& input, const EncoderParams& params, const ContextVectors* imported,
                    std::vector<std::size_t>& ids) {
  const auto L = static_cast<Eigen::Index>(input.size());
  if (params.mode == EncoderMode::ImportedVectors) {
    if (!imported) throw Error("imported-vectors encoder needs a .ctxvec file");
    const Matrix* v = imported->find(input.example_id);
    if (!v) throw Error("no imported vectors for example " + input.example_id);
    if (v->rows() != L || v->cols() != params.segments.cols())
      throw Error("imported vectors for example " + input.example_id + " have shape " +
                  std::to_string(v->rows()) + "x" + std::to_string(v->cols()) + ", expected " +
                  std::to_string(L) + "x" + std::to_string(params.segments.cols()));
    return *v;
  }
  Matrix x(L, params.embedding.cols());
  ids.resize(input.size());
  for (Eigen::Index i = 0; i < L; ++i) {
    ids[static_cast<std::size_t>(i)] = params.vocab.id(input.tokens[static_cast<std::size_t>(i)].text);
    x.row(i) = params.embedding.row(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(i)]));
  }
  return x;
}

void row_softmax(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

Matrix mixer_forward(const Matrix& x, const MixerParams& m, const RopeTable& rope, MixerCache* cache) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Matrix qr = rope.apply(x * m.wq.transpose());
  Matrix kr = rope.apply(x * m.wk.transpose());
  Matrix v = x * m.wv.transpose();
  Matrix p = (qr * kr.transpose()) * scale;
  row_softmax(p);
  Matrix o = p * v;
  Matrix y = x + o * m.wo.transpose();
  Matrix f = ((y * m.ff1.transpose()).rowwise() + m.ff1_bias.transpose()).array().tanh().matrix();
  Matrix h = ((f * m.ff2.transpose()).rowwise() + m.ff2_bias.transpose()) + y;
  if (cache) *cache = {x, kr, qr, v, p, o, y, f};
  return h;
}

Forward forward(const InputSequence& input, const ModelParams& params, const ContextVectors* imported,
                bool keep_cache) {
  Forward fw;
  const auto& enc = params.encoder;
  Matrix x = base_vectors(input, enc, imported, fw.ids);
  fw.segs = segment_ids(input);
  for (std::size_t i = 0; i < fw.segs.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) += enc.segments.row(static_cast<Eigen::Index>(fw.segs[i]));

  if (enc.mixer) {
    const auto positions = iota_positions(0, input.size());
    const RopeTable rope(positions, params.shape.d_model);
    if (keep_cache) fw.mixer.emplace();
    fw.h = mixer_forward(x, *enc.mixer, rope, keep_cache ? &*fw.mixer : nullptr);
  } else {
    fw.h = std::move(x);
  }

  fw.rows = input.context_rows();
  fw.col_begin = input.incomplete_range.begin;
  fw.cols = input.column_count();
  const auto row_pos = iota_positions(0, fw.rows);
  const auto col_pos = iota_positions(fw.col_begin, fw.cols);
  const RopeTable row_rope(row_pos, params.shape.d_head);
  const RopeTable col_rope(col_pos, params.shape.d_head);
  const auto hr = fw.h.topRows(static_cast<Eigen::Index>(fw.rows));
  const auto hc = fw.h.middleRows(static_cast<Eigen::Index>(fw.col_begin), static_cast<Eigen::Index>(fw.cols));
  for (auto op : kEditOps) {
    const auto& w = params.head.ops[op_index(op)];
    const auto k = op_index(op);
    fw.qr[k] = row_rope.apply((hr * w.wq.transpose()).rowwise() + w.bq.transpose());
    fw.kr[k] = col_rope.apply((hc * w.wk.transpose()).rowwise() + w.bk.transpose());
    fw.grids[k] = {op, fw.qr[k] * fw.kr[k].transpose()};
  }
  return fw;
}

// Accumulates d(loss)/d(params) for one example into `g`; returns the loss.
double backward(const InputSequence& input, const EditMatrix& gold, const ModelParams& params, const Forward& fw,
                ModelParams& g) {
  const auto L = static_cast<Eigen::Index>(input.size());
  const auto d = static_cast<Eigen::Index>(params.shape.d_model);
  Matrix dh = Matrix::Zero(L, d);
  const auto hr = fw.h.topRows(static_cast<Eigen::Index>(fw.rows));
  const auto hc = fw.h.middleRows(static_cast<Eigen::Index>(fw.col_begin), static_cast<Eigen::Index>(fw.cols));
  const auto row_pos = iota_positions(0, fw.rows);
  const auto col_pos = iota_positions(fw.col_begin, fw.cols);
  const RopeTable row_rope(row_pos, params.shape.d_head);
  const RopeTable col_rope(col_pos, params.shape.d_head);

  double loss = 0.0;
  for (auto op : kEditOps) {
    const auto k = op_index(op);
    Matrix ds;
    loss += circle_loss(fw.grids[k].values, gold, op, &ds);
    const Matrix dq = row_rope.apply(ds * fw.kr[k], true);
    const Matrix dk = col_rope.apply(ds.transpose() * fw.qr[k], true);
    const auto& w = params.head.ops[k];
    auto& gw = g.head.ops[k];
    gw.wq.noalias() += dq.transpose() * hr;
    gw.bq += dq.colwise().sum().transpose();
    gw.wk.noalias() += dk.transpose() * hc;
    gw.bk += dk.colwise().sum().transpose();
    dh.topRows(static_cast<Eigen::Index>(fw.rows)).noalias() += dq * w.wq;
    dh.middleRows(static_cast<Eigen::Index>(fw.col_begin), static_cast<Eigen::Index>(fw.cols)).noalias() +=
        dk * w.wk;
  }

  Matrix dx;
  if (params.encoder.mixer) {
    const auto& m = *params.encoder.mixer;
    const auto& c = *fw.mixer;
    auto& gm = *g.encoder.mixer;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const auto positions = iota_positions(0, input.size());
    const RopeTable rope(positions, params.shape.d_model);

    Matrix dy = dh;
    gm.ff2.noalias() += dh.transpose() * c.f;
    gm.ff2_bias += dh.colwise().sum().transpose();
    const Matrix dz = ((dh * m.ff2).array() * (1.0 - c.f.array().square())).matrix();
    gm.ff1.noalias() += dz.transpose() * c.y;
    gm.ff1_bias += dz.colwise().sum().transpose();
    dy.noalias() += dz * m.ff1;

    dx = dy;
    gm.wo.noalias() += dy.transpose() * c.o;
    const Matrix d_o = dy * m.wo;
    const Matrix dp = d_o * c.v.transpose();
    const Matrix dv = c.p.transpose() * d_o;
    Matrix dsc = c.p.array() * (dp.colwise() - (dp.array() * c.p.array()).rowwise().sum().matrix()).array();
    dsc *= scale;
    const Matrix dqa = rope.apply(dsc * c.kr, true);
    const Matrix dka = rope.apply(dsc.transpose() * c.qr, true);
    gm.wq.noalias() += dqa.transpose() * c.x;
    gm.wk.noalias() += dka.transpose() * c.x;
    gm.wv.noalias() += dv.transpose() * c.x;
    dx.noalias() += dqa * m.wq + dka * m.wk + dv * m.wv;
  } else {
    dx = std::move(dh);
  }

  for (Eigen::Index i = 0; i < L; ++i) {
    g.encoder.segments.row(static_cast<Eigen::Index>(fw.segs[static_cast<std::size_t>(i)])) += dx.row(i);
    if (params.shape.mode == EncoderMode::TrainableEmbedding)
      g.encoder.embedding.row(static_cast<Eigen::Index>(fw.ids[static_cast<std::size_t>(i)])) += dx.row(i);
  }
  return loss;
}

void add_into(ModelParams& acc, ModelParams& x) {
  auto a = tensors(acc);
  auto b = tensors(x);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].size(); ++i) a[t].data[i] += b[t].data[i];
}

}  // namespace

Matrix encode(const InputSequence& input, const EncoderParams& params, const ContextVectors* imported) {
  std::vector<std::size_t> ids;
  Matrix x = base_vectors(input, params, imported, ids);
  const auto segs = segment_ids(input);
  for (std::size_t i = 0; i < segs.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) += params.segments.row(static_cast<Eigen::Index>(segs[i]));
  if (!params.mixer) return x;
  const auto positions = iota_positions(0, input.size());
  const RopeTable rope(positions, static_cast<std::size_t>(x.cols()));
  return mixer_forward(x, *params.mixer, rope, nullptr);
}

Projection project(const Matrix& context_h, const Matrix& column_h, const HeadParams& head, EditOp op) {
  const auto& w = head.ops[op_index(op)];
  return {(context_h * w.wq.transpose()).rowwise() + w.bq.transpose(),
          (column_h * w.wk.transpose()).rowwise() + w.bk.transpose()};
}

ScoreGrids score(const InputSequence& input, const ModelParams& params, const ContextVectors* imported) {
  return forward(input, params, imported, false).grids;
}

Gradient grad(const ModelParams& params, std::span<const TrainingExample> batch, const ContextVectors* imported,
              std::size_t workers) {
  Gradient out{0.0, params.zeros_like()};
  if (batch.empty()) return out;

  std::vector<ModelParams> partial(batch.size(), ModelParams{});
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<std::exception_ptr> errors(batch.size());
  auto run = [&](std::size_t i) {
    try {
      const auto& ex = batch[i];
      const auto fw = forward(ex.input, params, imported, true);
      partial[i] = params.zeros_like();
      losses[i] = backward(ex.input, ex.gold, params, fw, partial[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, batch.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < batch.size(); i += workers) run(i);
      });
    for (auto& t : pool) t.join();
  }

  // Fixed reduction order keeps results independent of scheduling.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    if (!std::isfinite(losses[i])) throw Error("non-finite loss for example " + batch[i].input.example_id);
    out.loss += losses[i];
    add_into(out.grad, partial[i]);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& t : tensors(out.grad))
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] *= inv;
  return out;
}

}  // namespace iurkit
