#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "turl/corpus.hpp"
#include "turl/encoder.hpp"
#include "turl/numeric.hpp"
#include "turl/pretrain.hpp"
#include "turl/tasks.hpp"

namespace turl::store {

using numeric::Matrix;
using numeric::Tensor;

/// Every tunable of the pipeline. Text form is one `key=value` per line;
/// '#' starts a comment. Unknown keys are rejected.
struct Config {
  // encoder
  int num_blocks = 4;
  int d_model = 312;
  int d_intermediate = 1200;
  int num_heads = 12;
  int max_len = 256;
  // masking
  double mlm_select = 0.20;
  double mlm_mask = 0.80;
  double mlm_random = 0.10;
  double mer_select = 0.60;
  double mer_keep = 0.10;
  double mer_mask_both = 0.63;
  double mer_random_sub = 0.10;
  // pre-training
  double pretrain_lr = 1e-4;
  int pretrain_epochs = 80;
  int pretrain_batch_size = 1;
  int candidate_cap = 256;
  bool use_visibility = true;
  // fine-tuning
  double finetune_lr = 1e-4;
  int finetune_epochs = 10;
  int sa_epochs = 50;
  int finetune_batch_size = 1;
  // corpus
  int min_entities = 3;
  int max_columns = 20;
  int heldout_cap = 0;
  // tasks
  int cta_min_linked = 3;
  int min_label_instances = 100;
  int cf_min_pairs = 3;
  bool cf_filter_candidates = true;
  int sa_min_tables = 10;
  int rp_top_k_tables = 50;
  int rp_seeds = 0;
  int sa_seeds = 0;
  bool el_reweight = false;
  // paths and seed
  std::string side_dir;
  std::uint64_t seed = 0;

  /// Calls fn(key, field&) for every field in key order.
  template <typename Fn>
  void visit(Fn&& fn);
  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<Config*>(this)->visit([&](const char* k, auto& v) { fn(k, std::as_const(v)); });
  }

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::vector<std::string> keys() const;

  /// Applies a config text on top of the current values.
  void merge_text(const std::string& text);
  static Config from_text(const std::string& text);
  static Config load(const std::string& path);
  /// Canonical form: every key, sorted, `key=value\n`.
  std::string to_text() const;
  void save(const std::string& path) const;
  /// 16 hex digits of FNV-1a over to_text().
  std::string hash() const;
  void validate() const;

  encoder::EncoderConfig encoder_config(int token_vocab, int entity_vocab) const;
  pretrain::MaskRatios ratios() const;
  pretrain::PretrainConfig pretrain_config() const;
  tasks::FinetuneConfig finetune_config(tasks::Task task) const;
  tasks::TaskThresholds thresholds() const;
  corpus::FilterThresholds filter_thresholds() const;

  bool operator==(const Config&) const = default;
};

template <typename Fn>
void Config::visit(Fn&& fn) {
  fn("candidate_cap", candidate_cap);
  fn("cf_filter_candidates", cf_filter_candidates);
  fn("cf_min_pairs", cf_min_pairs);
  fn("cta_min_linked", cta_min_linked);
  fn("d_intermediate", d_intermediate);
  fn("d_model", d_model);
  fn("el_reweight", el_reweight);
  fn("finetune_batch_size", finetune_batch_size);
  fn("finetune_epochs", finetune_epochs);
  fn("finetune_lr", finetune_lr);
  fn("heldout_cap", heldout_cap);
  fn("max_columns", max_columns);
  fn("max_len", max_len);
  fn("mer_keep", mer_keep);
  fn("mer_mask_both", mer_mask_both);
  fn("mer_random_sub", mer_random_sub);
  fn("mer_select", mer_select);
  fn("min_entities", min_entities);
  fn("min_label_instances", min_label_instances);
  fn("mlm_mask", mlm_mask);
  fn("mlm_random", mlm_random);
  fn("mlm_select", mlm_select);
  fn("num_blocks", num_blocks);
  fn("num_heads", num_heads);
  fn("pretrain_batch_size", pretrain_batch_size);
  fn("pretrain_epochs", pretrain_epochs);
  fn("pretrain_lr", pretrain_lr);
  fn("rp_seeds", rp_seeds);
  fn("rp_top_k_tables", rp_top_k_tables);
  fn("sa_epochs", sa_epochs);
  fn("sa_min_tables", sa_min_tables);
  fn("sa_seeds", sa_seeds);
  fn("seed", seed);
  fn("side_dir", side_dir);
  fn("use_visibility", use_visibility);
}

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  encoder::EncoderConfig encoder;
  std::map<std::string, std::string> metadata;  // e.g. label vocabularies
  std::vector<Tensor<float>> tensors;           // value only; grads empty
  std::optional<numeric::AdamState<float>> adam;

  const Tensor<float>* find(const std::string& name) const;
  /// Copies the named tensor into dst (shape must match).
  void restore(Tensor<float>& dst) const;
};

/// Writes the checkpoint and returns its content hash.
std::uint64_t save_checkpoint(const std::string& path, const std::string& config_text,
                              const encoder::EncoderConfig& encoder, const std::vector<const Tensor<float>*>& tensors,
                              const numeric::AdamState<float>* adam = nullptr,
                              const std::map<std::string, std::string>& metadata = {});
/// Throws CorruptCheckpoint on bad magic, truncation or hash mismatch and
/// VersionMismatch on a different format version.
Checkpoint load_checkpoint(const std::string& path);
/// Hash stored in a checkpoint file without decoding tensors.
std::uint64_t checkpoint_hash(const std::string& path);

/// Encoder weights rebuilt from a checkpoint; every encoder tensor must be present.
encoder::ModelWeights<float> weights_from(const Checkpoint& ckpt);
std::vector<const Tensor<float>*> const_view(const std::vector<Tensor<float>*>& tensors);

}  // namespace turl::store
