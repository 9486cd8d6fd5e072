#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "turl/encoding.hpp"
#include "turl/numeric.hpp"
#include "turl/rng.hpp"

namespace turl::encoder {

using numeric::Graph;
using numeric::Matrix;
using numeric::Tensor;

struct EncoderConfig {
  int num_blocks = 4;
  int d_model = 312;
  int d_intermediate = 1200;
  int num_heads = 12;
  int max_len = 256;
  int token_vocab = 0;
  int entity_vocab = 0;

  int head_dim() const { return d_model / num_heads; }
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <typename Real>
struct BlockWeights {
  Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<Real> ln1_gamma, ln1_beta;
  Tensor<Real> w1, b1, w2, b2;
  Tensor<Real> ln2_gamma, ln2_beta;
};

template <typename Real>
struct ModelWeights {
  EncoderConfig config;
  Tensor<Real> word;         // token_vocab x d
  Tensor<Real> entity;       // entity_vocab x d
  Tensor<Real> token_type;   // caption / header
  Tensor<Real> entity_type;  // subject / object / topic
  Tensor<Real> position;     // max_len x d
  Tensor<Real> fuse_w, fuse_b;  // [e^e ; e^m] -> d
  std::vector<BlockWeights<Real>> blocks;
  Tensor<Real> mlm_w, mlm_b;  // MLM output projection, scored against word rows
  Tensor<Real> mer_w, mer_b;  // MER output projection, scored against entity rows

  /// Random initialisation. entity_names[i] lists token ids of entity i's
  /// name; non-empty lists set that entity row to the mean of those word rows.
  static ModelWeights init(const EncoderConfig& config, Rng& rng,
                           const std::vector<std::vector<int>>& entity_names = {});
  /// Zero-filled tensors of the right shapes.
  static ModelWeights zeros(const EncoderConfig& config);

  std::vector<Tensor<Real>*> parameters();
  std::vector<const Tensor<Real>*> parameters() const;
  void zero_grad();

  template <typename Other>
  ModelWeights<Other> cast() const;
};

/// h0 (n x d_model) for a linearized sequence.
template <typename Real>
typename Graph<Real>::Var embed_inputs(Graph<Real>& g, const encoding::LinearizedSequence& seq,
                                       ModelWeights<Real>& w);

/// One post-norm block. mask is n*n row-major (1 = visible) or null for full
/// attention. When attention is non-null it receives one n x n probability
/// matrix per head.
template <typename Real>
typename Graph<Real>::Var transformer_block(Graph<Real>& g, typename Graph<Real>::Var h, const std::uint8_t* mask,
                                            BlockWeights<Real>& block, const EncoderConfig& config,
                                            std::vector<Matrix<Real>>* attention = nullptr);

/// Full encoder: embed_inputs followed by every block. Output row i belongs
/// to element i.
template <typename Real>
typename Graph<Real>::Var encode(Graph<Real>& g, const encoding::LinearizedSequence& seq,
                                 const encoding::VisibilityMatrix* visibility, ModelWeights<Real>& w,
                                 std::vector<std::vector<Matrix<Real>>>* attention = nullptr);

/// Convenience forward pass returning the n x d_model output value.
template <typename Real>
Matrix<Real> forward(const encoding::LinearizedSequence& seq, const encoding::VisibilityMatrix* visibility,
                     ModelWeights<Real>& w);

}  // namespace turl::encoder
