#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "iurkit/error.hpp"
#include "iurkit/scoring.hpp"

namespace iurkit {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kModelMagic[8] = {'I', 'U', 'R', 'K', 'I', 'T', 'M', 'D'};
constexpr int kModelVersion = 1;

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw Error(std::string("truncated file reading ") + what);
  return value;
}

std::string get_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw Error(std::string("truncated file reading ") + what);
  return s;
}

// Row-major float32 dump of a column-major tensor.
void put_tensor(std::ostream& out, const TensorRef& t) {
  for (std::size_t r = 0; r < t.rows; ++r)
    for (std::size_t c = 0; c < t.cols; ++c) put(out, static_cast<float>(t.data[c * t.rows + r]));
}

void get_tensor(std::istream& in, const TensorRef& t) {
  for (std::size_t r = 0; r < t.rows; ++r)
    for (std::size_t c = 0; c < t.cols; ++c) t.data[c * t.rows + r] = get<float>(in, t.name.c_str());
}

}  // namespace

void write_model(std::ostream& out, const ModelParams& params_in, const AdamState* adam) {
  auto params = params_in;
  auto refs = tensors(params);
  std::optional<AdamState> state;
  if (adam) state = *adam;

  nlohmann::json header;
  header["format"] = "iurkit-model";
  header["version"] = kModelVersion;
  header["d_model"] = params.shape.d_model;
  header["d_head"] = params.shape.d_head;
  header["heads"] = params.shape.heads;
  header["d_ff"] = params.shape.d_ff;
  header["mixer"] = params.shape.mixer;
  header["mode"] = to_string(params.shape.mode);
  header["vocab"] = params.encoder.vocab.words();
  auto list = nlohmann::json::array();
  for (const auto& t : refs) list.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  if (state) {
    for (const auto& t : tensors(state->m)) list.push_back({{"name", "adam.m." + t.name}, {"shape", {t.rows, t.cols}}});
    for (const auto& t : tensors(state->v)) list.push_back({{"name", "adam.v." + t.name}, {"shape", {t.rows, t.cols}}});
    header["optimizer"] = {{"step", state->step}, {"epochs_done", state->epochs_done}};
  } else {
    header["optimizer"] = nullptr;
  }
  header["tensors"] = std::move(list);

  const auto text = header.dump();
  out.write(kModelMagic, sizeof(kModelMagic));
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : refs) put_tensor(out, t);
  if (state) {
    for (const auto& t : tensors(state->m)) put_tensor(out, t);
    for (const auto& t : tensors(state->v)) put_tensor(out, t);
  }
  if (!out) throw Error("failed writing model");
}

void save_model(const std::filesystem::path& path, const ModelParams& params, const AdamState* adam) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file: " + path.string());
  write_model(out, params, adam);
}

LoadedModel read_model(std::istream& in) {
  const auto magic = get_bytes(in, sizeof(kModelMagic), "model magic");
  if (std::memcmp(magic.data(), kModelMagic, sizeof(kModelMagic)) != 0) throw Error("not an iurkit model file");
  const auto len = get<std::uint64_t>(in, "model header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_bytes(in, len, "model header"));
    if (header.at("version").get<int>() != kModelVersion)
      throw Error("unsupported model version " + header.at("version").dump());
    ModelShape shape;
    shape.d_model = header.at("d_model").get<std::size_t>();
    shape.d_head = header.at("d_head").get<std::size_t>();
    shape.heads = header.at("heads").get<std::size_t>();
    shape.d_ff = header.at("d_ff").get<std::size_t>();
    shape.mixer = header.at("mixer").get<bool>();
    const auto mode = parse_encoder_mode(header.at("mode").get<std::string>());
    if (!mode) throw Error("unknown encoder mode " + header.at("mode").dump());
    shape.mode = *mode;
    auto words = header.at("vocab").get<std::vector<std::string>>();
    if (words.empty() || words.front() != Vocabulary::kUnknown) throw Error("model vocabulary must start with <unk>");
    words.erase(words.begin());

    LoadedModel loaded{ModelParams::zeros(shape, Vocabulary(words)), std::nullopt};
    std::vector<TensorRef> refs = tensors(loaded.params);
    if (!header.at("optimizer").is_null()) {
      loaded.adam = AdamState::for_params(loaded.params);
      loaded.adam->step = header["optimizer"].at("step").get<std::uint64_t>();
      loaded.adam->epochs_done = header["optimizer"].at("epochs_done").get<std::uint64_t>();
      for (auto t : tensors(loaded.adam->m)) refs.push_back({"adam.m." + t.name, t.data, t.rows, t.cols, false});
      for (auto t : tensors(loaded.adam->v)) refs.push_back({"adam.v." + t.name, t.data, t.rows, t.cols, false});
    }
    const auto& list = header.at("tensors");
    if (list.size() != refs.size()) throw Error("model tensor list does not match its declared shape");
    for (std::size_t k = 0; k < refs.size(); ++k) {
      const auto& entry = list[k];
      const auto dims = entry.at("shape").get<std::vector<std::size_t>>();
      if (entry.at("name").get<std::string>() != refs[k].name || dims.size() != 2 || dims[0] != refs[k].rows ||
          dims[1] != refs[k].cols)
        throw Error("model tensor " + entry.at("name").get<std::string>() + " does not match the expected layout");
      get_tensor(in, refs[k]);
    }
    return loaded;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed model header: ") + e.what());
  }
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model file: " + path.string());
  return read_model(in);
}

// ---------------------------------------------------------------- .ctxvec

void ContextVectors::insert(const std::string& id, Matrix vectors) {
  if (static_cast<std::size_t>(vectors.cols()) != d_model_)
    throw Error("context vectors for " + id + " have width " + std::to_string(vectors.cols()) + ", expected " +
                std::to_string(d_model_));
  records_[id] = std::move(vectors);
}

const Matrix* ContextVectors::find(const std::string& id) const {
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

void ContextVectors::write(std::ostream& out) const {
  const auto header = nlohmann::json{{"d_model", d_model_}, {"count", records_.size()}}.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [id, m] : records_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put(out, static_cast<float>(m(r, c)));
  }
  if (!out) throw Error("failed writing context vectors");
}

ContextVectors ContextVectors::read(std::istream& in) {
  const auto len = get<std::uint32_t>(in, ".ctxvec header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_bytes(in, len, ".ctxvec header"));
    ContextVectors out(header.at("d_model").get<std::size_t>());
    const auto count = header.at("count").get<std::size_t>();
    for (std::size_t k = 0; k < count; ++k) {
      const auto id = get_bytes(in, get<std::uint32_t>(in, ".ctxvec id length"), ".ctxvec id");
      const auto rows = get<std::uint32_t>(in, ".ctxvec position count");
      Matrix m(rows, static_cast<Eigen::Index>(out.d_model_));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<float>(in, ".ctxvec vector");
      out.insert(id, std::move(m));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed .ctxvec header: ") + e.what());
  }
}

void ContextVectors::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write context vector file: " + path.string());
  write(out);
}

ContextVectors ContextVectors::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open context vector file: " + path.string());
  return read(in);
}

}  // namespace iurkit
