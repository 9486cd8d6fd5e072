#include "turl/encoder.hpp"

#include <cmath>

#include "turl/errors.hpp"

namespace turl::encoder {

void EncoderConfig::validate() const {
  if (num_blocks < 0) throw ConfigError("num_blocks must be >= 0");
  if (d_model <= 0 || d_intermediate <= 0 || num_heads <= 0) throw ConfigError("model dimensions must be positive");
  if (d_model % num_heads != 0) throw ConfigError("d_model must be divisible by num_heads");
  if (max_len <= 0) throw ConfigError("max_len must be positive");
  if (token_vocab <= 0 || entity_vocab <= 0) throw ConfigError("vocabulary sizes must be positive");
}

namespace {

constexpr double kInitStd = 0.02;

template <typename Real>
Tensor<Real> make(const std::string& name, int rows, int cols) {
  return Tensor<Real>(name, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
}

template <typename Real>
void randomize(Tensor<Real>& t, Rng& rng) {
  for (auto& v : t.value.data) v = static_cast<Real>(rng.truncated_normal(kInitStd));
}

template <typename Real>
void fill(Tensor<Real>& t, Real value) {
  std::fill(t.value.data.begin(), t.value.data.end(), value);
}

template <typename Real, typename Fn>
void for_each_tensor(ModelWeights<Real>& w, Fn&& fn) {
  fn(w.word);
  fn(w.entity);
  fn(w.token_type);
  fn(w.entity_type);
  fn(w.position);
  fn(w.fuse_w);
  fn(w.fuse_b);
  for (auto& b : w.blocks) {
    for (Tensor<Real>* t : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_gamma, &b.ln1_beta, &b.w1,
                            &b.b1, &b.w2, &b.b2, &b.ln2_gamma, &b.ln2_beta})
      fn(*t);
  }
  fn(w.mlm_w);
  fn(w.mlm_b);
  fn(w.mer_w);
  fn(w.mer_b);
}

}  // namespace

template <typename Real>
ModelWeights<Real> ModelWeights<Real>::zeros(const EncoderConfig& c) {
  c.validate();
  ModelWeights<Real> w;
  w.config = c;
  const int d = c.d_model;
  w.word = make<Real>("word", c.token_vocab, d);
  w.entity = make<Real>("entity", c.entity_vocab, d);
  w.token_type = make<Real>("token_type", encoding::kNumTokenSegments, d);
  w.entity_type = make<Real>("entity_type", encoding::kNumEntitySegments, d);
  w.position = make<Real>("position", c.max_len, d);
  w.fuse_w = make<Real>("fuse.w", 2 * d, d);
  w.fuse_b = make<Real>("fuse.b", 1, d);
  for (int i = 0; i < c.num_blocks; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    BlockWeights<Real> b;
    b.wq = make<Real>(p + "wq", d, d);
    b.bq = make<Real>(p + "bq", 1, d);
    b.wk = make<Real>(p + "wk", d, d);
    b.bk = make<Real>(p + "bk", 1, d);
    b.wv = make<Real>(p + "wv", d, d);
    b.bv = make<Real>(p + "bv", 1, d);
    b.wo = make<Real>(p + "wo", d, d);
    b.bo = make<Real>(p + "bo", 1, d);
    b.ln1_gamma = make<Real>(p + "ln1.gamma", 1, d);
    b.ln1_beta = make<Real>(p + "ln1.beta", 1, d);
    b.w1 = make<Real>(p + "ff.w1", d, c.d_intermediate);
    b.b1 = make<Real>(p + "ff.b1", 1, c.d_intermediate);
    b.w2 = make<Real>(p + "ff.w2", c.d_intermediate, d);
    b.b2 = make<Real>(p + "ff.b2", 1, d);
    b.ln2_gamma = make<Real>(p + "ln2.gamma", 1, d);
    b.ln2_beta = make<Real>(p + "ln2.beta", 1, d);
    w.blocks.push_back(std::move(b));
  }
  w.mlm_w = make<Real>("mlm.w", d, d);
  w.mlm_b = make<Real>("mlm.b", 1, d);
  w.mer_w = make<Real>("mer.w", d, d);
  w.mer_b = make<Real>("mer.b", 1, d);
  return w;
}

template <typename Real>
ModelWeights<Real> ModelWeights<Real>::init(const EncoderConfig& c, Rng& rng,
                                            const std::vector<std::vector<int>>& entity_names) {
  ModelWeights<Real> w = zeros(c);
  // Matrices and embeddings get truncated-normal values; biases stay 0 and
  // layer-norm gains start at 1.
  for (Tensor<Real>* t : {&w.word, &w.entity, &w.token_type, &w.entity_type, &w.position, &w.fuse_w})
    randomize(*t, rng);
  for (auto& b : w.blocks) {
    for (Tensor<Real>* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) randomize(*t, rng);
    fill(b.ln1_gamma, Real(1));
    fill(b.ln2_gamma, Real(1));
  }
  randomize(w.mlm_w, rng);
  randomize(w.mer_w, rng);

  const std::size_t d = static_cast<std::size_t>(c.d_model);
  for (std::size_t e = 0; e < entity_names.size() && e < w.entity.rows(); ++e) {
    const auto& ids = entity_names[e];
    if (ids.empty()) continue;
    Real* row = w.entity.value.row(e);
    std::fill(row, row + d, Real(0));
    for (int t : ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= w.word.rows()) throw UnknownId("entity name token " + std::to_string(t));
      const Real* src = w.word.value.row(static_cast<std::size_t>(t));
      for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
    }
    const Real inv = Real(1) / static_cast<Real>(ids.size());
    for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
  }
  return w;
}

template <typename Real>
std::vector<Tensor<Real>*> ModelWeights<Real>::parameters() {
  std::vector<Tensor<Real>*> out;
  for_each_tensor(*this, [&](Tensor<Real>& t) { out.push_back(&t); });
  return out;
}

template <typename Real>
std::vector<const Tensor<Real>*> ModelWeights<Real>::parameters() const {
  std::vector<const Tensor<Real>*> out;
  for_each_tensor(const_cast<ModelWeights<Real>&>(*this), [&](Tensor<Real>& t) { out.push_back(&t); });
  return out;
}

template <typename Real>
void ModelWeights<Real>::zero_grad() {
  for_each_tensor(*this, [](Tensor<Real>& t) { t.zero_grad(); });
}

template <typename Real>
template <typename Other>
ModelWeights<Other> ModelWeights<Real>::cast() const {
  ModelWeights<Other> out = ModelWeights<Other>::zeros(config);
  const auto src = parameters();
  const auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<Other>();
  return out;
}

template <typename Real>
typename Graph<Real>::Var embed_inputs(Graph<Real>& g, const encoding::LinearizedSequence& seq, ModelWeights<Real>& w) {
  using Var = typename Graph<Real>::Var;
  std::vector<int> tok_rows, tok_ids, tok_seg, tok_pos;
  std::vector<int> ent_rows, ent_ids, ent_seg;
  std::vector<std::vector<int>> mentions;
  const auto check = [](int id, std::size_t limit, const char* what) {
    if (id < 0 || static_cast<std::size_t>(id) >= limit) throw UnknownId(std::string(what) + " id " + std::to_string(id));
  };
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& e = seq.elements[i];
    if (e.is_token()) {
      check(e.id, w.word.rows(), "token");
      check(e.position, w.position.rows(), "position");
      tok_rows.push_back(static_cast<int>(i));
      tok_ids.push_back(e.id);
      tok_seg.push_back(e.seg_type);
      tok_pos.push_back(e.position);
    } else {
      check(e.id, w.entity.rows(), "entity");
      for (int m : e.mention) check(m, w.word.rows(), "mention token");
      ent_rows.push_back(static_cast<int>(i));
      ent_ids.push_back(e.id);
      ent_seg.push_back(e.seg_type);
      mentions.push_back(e.mention);
    }
  }
  std::vector<std::pair<Var, std::vector<int>>> parts;
  if (!tok_rows.empty()) {
    Var x = g.add(g.embedding(w.word, tok_ids), g.embedding(w.token_type, tok_seg));
    x = g.add(x, g.embedding(w.position, tok_pos));
    parts.emplace_back(x, std::move(tok_rows));
  }
  if (!ent_rows.empty()) {
    Var fused = g.concat_cols({g.embedding(w.entity, ent_ids), g.embedding_mean(w.word, std::move(mentions))});
    Var x = g.affine(fused, g.parameter(w.fuse_w), g.parameter(w.fuse_b));
    x = g.add(x, g.embedding(w.entity_type, ent_seg));
    parts.emplace_back(x, std::move(ent_rows));
  }
  if (parts.empty()) throw TableTooSmall("cannot embed an empty sequence");
  return g.assemble_rows(seq.size(), parts);
}

template <typename Real>
typename Graph<Real>::Var transformer_block(Graph<Real>& g, typename Graph<Real>::Var h, const std::uint8_t* mask,
                                            BlockWeights<Real>& b, const EncoderConfig& c,
                                            std::vector<Matrix<Real>>* attention) {
  using Var = typename Graph<Real>::Var;
  if (g.value(h).cols != static_cast<std::size_t>(c.d_model)) throw ShapeMismatch("block input width != d_model");
  const std::size_t dh = static_cast<std::size_t>(c.head_dim());
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  Var q = g.affine(h, g.parameter(b.wq), g.parameter(b.bq));
  Var k = g.affine(h, g.parameter(b.wk), g.parameter(b.bk));
  Var v = g.affine(h, g.parameter(b.wv), g.parameter(b.bv));
  std::vector<Var> heads;
  for (int i = 0; i < c.num_heads; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * dh;
    Var scores = g.scale(g.matmul_transposed(g.slice_cols(q, off, dh), g.slice_cols(k, off, dh)), scale);
    Var probs = g.softmax_rows(scores, mask);
    if (attention) attention->push_back(g.value(probs));
    heads.push_back(g.matmul(probs, g.slice_cols(v, off, dh)));
  }
  Var attn = g.affine(heads.size() == 1 ? heads.front() : g.concat_cols(heads), g.parameter(b.wo), g.parameter(b.bo));
  Var h1 = g.layer_norm(g.add(h, attn), g.parameter(b.ln1_gamma), g.parameter(b.ln1_beta));
  Var ff = g.affine(g.gelu(g.affine(h1, g.parameter(b.w1), g.parameter(b.b1))), g.parameter(b.w2), g.parameter(b.b2));
  return g.layer_norm(g.add(h1, ff), g.parameter(b.ln2_gamma), g.parameter(b.ln2_beta));
}

template <typename Real>
typename Graph<Real>::Var encode(Graph<Real>& g, const encoding::LinearizedSequence& seq,
                                 const encoding::VisibilityMatrix* visibility, ModelWeights<Real>& w,
                                 std::vector<std::vector<Matrix<Real>>>* attention) {
  if (seq.size() > static_cast<std::size_t>(w.config.max_len))
    throw ShapeMismatch("sequence length " + std::to_string(seq.size()) + " exceeds max_len");
  if (visibility && visibility->size() != seq.size()) throw ShapeMismatch("visibility matrix size differs from sequence");
  const std::uint8_t* mask = visibility ? visibility->data() : nullptr;
  auto h = embed_inputs(g, seq, w);
  for (auto& block : w.blocks) {
    std::vector<Matrix<Real>>* sink = nullptr;
    if (attention) sink = &attention->emplace_back();
    h = transformer_block(g, h, mask, block, w.config, sink);
  }
  return h;
}

template <typename Real>
Matrix<Real> forward(const encoding::LinearizedSequence& seq, const encoding::VisibilityMatrix* visibility,
                     ModelWeights<Real>& w) {
  Graph<Real> g(false);
  return g.value(encode(g, seq, visibility, w));
}

#define TURL_INSTANTIATE(Real)                                                                                    \
  template struct ModelWeights<Real>;                                                                             \
  template Graph<Real>::Var embed_inputs<Real>(Graph<Real>&, const encoding::LinearizedSequence&,                \
                                               ModelWeights<Real>&);                                              \
  template Graph<Real>::Var transformer_block<Real>(Graph<Real>&, Graph<Real>::Var, const std::uint8_t*,         \
                                                    BlockWeights<Real>&, const EncoderConfig&,                    \
                                                    std::vector<Matrix<Real>>*);                                  \
  template Graph<Real>::Var encode<Real>(Graph<Real>&, const encoding::LinearizedSequence&,                      \
                                         const encoding::VisibilityMatrix*, ModelWeights<Real>&,                  \
                                         std::vector<std::vector<Matrix<Real>>>*);                                \
  template Matrix<Real> forward<Real>(const encoding::LinearizedSequence&, const encoding::VisibilityMatrix*,    \
                                      ModelWeights<Real>&);

TURL_INSTANTIATE(float)
TURL_INSTANTIATE(double)
#undef TURL_INSTANTIATE

template ModelWeights<double> ModelWeights<float>::cast<double>() const;
template ModelWeights<float> ModelWeights<double>::cast<float>() const;
template ModelWeights<float> ModelWeights<float>::cast<float>() const;
template ModelWeights<double> ModelWeights<double>::cast<double>() const;

}  // namespace turl::encoder
