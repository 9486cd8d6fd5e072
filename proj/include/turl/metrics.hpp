#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace turl::metrics {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // no predictions at all; precision reported as 0
};

/// Per-instance label sets for multi-label tasks.
struct LabelSets {
  std::set<int> predicted;
  std::set<int> gold;
};

PRF micro_prf(const std::vector<LabelSets>& instances);

/// Top-1 linking outcome. A no-prediction instance counts against recall only.
struct LinkPrediction {
  std::optional<std::int64_t> predicted;
  std::int64_t gold = 0;
};

PRF micro_prf_el(const std::vector<LinkPrediction>& instances);

struct RankedPrediction {
  std::string instance_id;
  std::vector<std::int64_t> ranked;  // unique ids, best first
  std::set<std::int64_t> gold;
  bool no_prediction = false;
};

/// Average precision with every gold in the denominator (missed golds add 0).
double average_precision(const RankedPrediction& p);
double mean_average_precision(const std::vector<RankedPrediction>& predictions);
/// |top-k ∩ gold| / k, averaged over instances.
double precision_at_k(const std::vector<RankedPrediction>& predictions, std::size_t k);
/// Fraction of instances with at least one gold in the top k.
double hits_at_k(const std::vector<RankedPrediction>& predictions, std::size_t k);
/// Fraction of golds present anywhere in their instance's candidate list.
double candidate_recall(const std::vector<RankedPrediction>& candidates);
double accuracy(const std::vector<std::int64_t>& top1, const std::vector<std::int64_t>& golds);

/// Keeps only instances with a gold inside their ranking (cell-filling protocol).
std::vector<RankedPrediction> restrict_to_covered(const std::vector<RankedPrediction>& predictions);

/// Expected MAP of a uniformly random ordering of each instance's ranking,
/// estimated with a fixed-seed Monte Carlo over `trials` shuffles.
double random_ranking_map(const std::vector<RankedPrediction>& predictions, int trials = 200,
                          std::uint64_t seed = 0);

}  // namespace turl::metrics
