#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "fna/vit.hpp"

namespace fna {
namespace {

using Kind = WeightFormatError::Kind;

constexpr char kMagic[4] = {'V', 'I', 'T', 'W'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 7;

void expect_shape(const Matrix& m, std::size_t r, std::size_t c, const std::string& what) {
  if (m.rows() != r || m.cols() != c) {
    throw ShapeError(what + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
                     std::to_string(r) + "x" + std::to_string(c));
  }
}

void expect_len(const std::vector<float>& v, std::size_t n, const std::string& what) {
  if (v.size() != n) throw ShapeError(what + " length " + std::to_string(v.size()) + " != " + std::to_string(n));
}

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void floats(std::span<const float> v) {
    for (float x : v) f32(x);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint32_t u32() {
    if (in_.size() - pos_ < 4) {
      throw WeightFormatError(Kind::Truncated, "VITW blob truncated at byte " + std::to_string(pos_));
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void floats(std::span<float> dst) {
    for (float& x : dst) x = f32();
  }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// Fused QKV block order: part (Q, K, V), then head, then head column.
template <typename Head>
auto& qkv_weight(Head& h, std::size_t part) {
  return part == 0 ? h.query : part == 1 ? h.key : h.value;
}

template <typename Head>
auto& qkv_bias(Head& h, std::size_t part) {
  return part == 0 ? h.query_bias : part == 1 ? h.key_bias : h.value_bias;
}

std::uint64_t layer_floats(std::uint64_t D, std::uint64_t M) {
  return 2 * D + 3 * D * D + 3 * D + D * D + D + 2 * D + M * D + M + D * M + D;
}

}  // namespace

void ModelWeights::validate() const {
  if (layers.empty()) throw ShapeError("model needs at least one layer");
  if (heads * head_dim != model_dim || heads == 0) throw ShapeError("H*d must equal D");
  if ((grid_h == 0) != (grid_w == 0)) throw ShapeError("grid dims must both be zero or both positive");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lw = layers[l];
    const std::string tag = "layer " + std::to_string(l) + " ";
    expect_len(lw.ln1.gamma, model_dim, tag + "ln1 gamma");
    expect_len(lw.ln1.beta, model_dim, tag + "ln1 beta");
    expect_len(lw.ln2.gamma, model_dim, tag + "ln2 gamma");
    expect_len(lw.ln2.beta, model_dim, tag + "ln2 beta");
    if (lw.attention.heads != heads || lw.attention.head_dim != head_dim || lw.attention.model_dim != model_dim) {
      throw ShapeError(tag + "attention dims disagree with the model");
    }
    lw.attention.validate();
    expect_shape(lw.fc1, model_dim, mlp_dim, tag + "fc1");
    expect_len(lw.fc1_bias, mlp_dim, tag + "fc1 bias");
    expect_shape(lw.fc2, mlp_dim, model_dim, tag + "fc2");
    expect_len(lw.fc2_bias, model_dim, tag + "fc2 bias");
  }
}

ModelWeights make_zero_model(std::size_t layers, std::size_t heads, std::size_t head_dim, std::size_t mlp_dim) {
  ModelWeights w;
  w.heads = heads;
  w.head_dim = head_dim;
  w.model_dim = heads * head_dim;
  w.mlp_dim = mlp_dim;
  const std::size_t D = w.model_dim;
  w.layers.resize(layers);
  for (auto& lw : w.layers) {
    lw.ln1 = {std::vector<float>(D, 1.0f), std::vector<float>(D, 0.0f)};
    lw.ln2 = {std::vector<float>(D, 1.0f), std::vector<float>(D, 0.0f)};
    auto& a = lw.attention;
    a.heads = heads;
    a.head_dim = head_dim;
    a.model_dim = D;
    a.output_bias.assign(D, 0.0f);
    a.per_head.resize(heads);
    for (auto& h : a.per_head) {
      h.query = Matrix(D, head_dim);
      h.key = Matrix(D, head_dim);
      h.value = Matrix(D, head_dim);
      h.output = Matrix(D, head_dim);
      h.query_bias.assign(head_dim, 0.0f);
      h.key_bias.assign(head_dim, 0.0f);
      h.value_bias.assign(head_dim, 0.0f);
    }
    lw.fc1 = Matrix(D, mlp_dim);
    lw.fc1_bias.assign(mlp_dim, 0.0f);
    lw.fc2 = Matrix(mlp_dim, D);
    lw.fc2_bias.assign(D, 0.0f);
  }
  return w;
}

std::vector<std::uint8_t> serialize_weights(const ModelWeights& w) {
  w.validate();
  const std::size_t D = w.model_dim;
  const std::size_t d = w.head_dim;
  const std::size_t M = w.mlp_dim;
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 4 * w.depth() * layer_floats(D, M));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  Writer wr(out);
  wr.u32(kVitwVersion);
  for (std::size_t v : {w.depth(), w.heads, w.head_dim, w.mlp_dim, w.grid_h, w.grid_w})
    wr.u32(static_cast<std::uint32_t>(v));

  for (const auto& lw : w.layers) {
    wr.floats(lw.ln1.gamma);
    wr.floats(lw.ln1.beta);
    const auto& heads = lw.attention.per_head;
    for (std::size_t part = 0; part < 3; ++part)
      for (std::size_t h = 0; h < w.heads; ++h)
        for (std::size_t c = 0; c < d; ++c) {
          const Matrix& m = qkv_weight(heads[h], part);
          for (std::size_t i = 0; i < D; ++i) wr.f32(m(i, c));
        }
    for (std::size_t part = 0; part < 3; ++part)
      for (std::size_t h = 0; h < w.heads; ++h) wr.floats(qkv_bias(heads[h], part));
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t h = 0; h < w.heads; ++h)
        for (std::size_t c = 0; c < d; ++c) wr.f32(heads[h].output(i, c));
    wr.floats(lw.attention.output_bias);
    wr.floats(lw.ln2.gamma);
    wr.floats(lw.ln2.beta);
    for (std::size_t o = 0; o < M; ++o)
      for (std::size_t i = 0; i < D; ++i) wr.f32(lw.fc1(i, o));
    wr.floats(lw.fc1_bias);
    for (std::size_t o = 0; o < D; ++o)
      for (std::size_t i = 0; i < M; ++i) wr.f32(lw.fc2(i, o));
    wr.floats(lw.fc2_bias);
  }
  return out;
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> blob) {
  if (blob.size() < 4 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw WeightFormatError(Kind::BadMagic, "not a VITW file (bad magic)");
  }
  Reader rd(blob.subspan(4));
  const std::uint32_t version = rd.u32();
  if (version != kVitwVersion) {
    throw WeightFormatError(Kind::VersionMismatch, "unsupported VITW version " + std::to_string(version));
  }
  const std::uint64_t L = rd.u32(), H = rd.u32(), d = rd.u32(), M = rd.u32();
  const std::uint64_t gh = rd.u32(), gw = rd.u32();
  if (L == 0 || H == 0 || d == 0 || M == 0) {
    throw WeightFormatError(Kind::ShapeInconsistent, "VITW header has a zero dimension");
  }
  if ((gh == 0) != (gw == 0)) {
    throw WeightFormatError(Kind::ShapeInconsistent, "VITW grid dims must both be zero or both positive");
  }
  const std::uint64_t D = H * d;
  const std::uint64_t expected = 4ULL * L * layer_floats(D, M);
  if (rd.remaining() < expected) {
    throw WeightFormatError(Kind::Truncated, "VITW payload has " + std::to_string(rd.remaining()) +
                                                 " bytes, header implies " + std::to_string(expected));
  }
  if (rd.remaining() > expected) {
    throw WeightFormatError(Kind::ShapeInconsistent,
                            "VITW payload has " + std::to_string(rd.remaining() - expected) + " trailing bytes");
  }

  ModelWeights w = make_zero_model(L, H, d, M);
  w.grid_h = gh;
  w.grid_w = gw;
  for (auto& lw : w.layers) {
    rd.floats(lw.ln1.gamma);
    rd.floats(lw.ln1.beta);
    auto& heads = lw.attention.per_head;
    for (std::size_t part = 0; part < 3; ++part)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t c = 0; c < d; ++c) {
          Matrix& m = qkv_weight(heads[h], part);
          for (std::size_t i = 0; i < D; ++i) m(i, c) = rd.f32();
        }
    for (std::size_t part = 0; part < 3; ++part)
      for (std::size_t h = 0; h < H; ++h)
        rd.floats(qkv_bias(heads[h], part));
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t c = 0; c < d; ++c) heads[h].output(i, c) = rd.f32();
    rd.floats(lw.attention.output_bias);
    rd.floats(lw.ln2.gamma);
    rd.floats(lw.ln2.beta);
    for (std::size_t o = 0; o < M; ++o)
      for (std::size_t i = 0; i < D; ++i) lw.fc1(i, o) = rd.f32();
    rd.floats(lw.fc1_bias);
    for (std::size_t o = 0; o < D; ++o)
      for (std::size_t i = 0; i < M; ++i) lw.fc2(i, o) = rd.f32();
    rd.floats(lw.fc2_bias);
  }
  return w;
}

void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
  const auto blob = serialize_weights(w);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WeightFormatError(Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!out) throw WeightFormatError(Kind::Io, "write failed for " + path.string());
}

ModelWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFormatError(Kind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(blob);
}

}  // namespace fna
