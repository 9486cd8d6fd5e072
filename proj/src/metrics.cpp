#include "turl/metrics.hpp"

#include <stdexcept>

#include "turl/errors.hpp"
#include "turl/rng.hpp"

namespace turl::metrics {

namespace {

PRF from_counts(double tp, double fp, double fn) {
  PRF r;
  if (tp + fp > 0)
    r.precision = tp / (tp + fp);
  else
    r.precision_undefined = true;
  r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

}  // namespace

PRF micro_prf(const std::vector<LabelSets>& instances) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& inst : instances) {
    for (int p : inst.predicted) (inst.gold.count(p) ? tp : fp) += 1;
    for (int g : inst.gold)
      if (!inst.predicted.count(g)) fn += 1;
  }
  return from_counts(tp, fp, fn);
}

PRF micro_prf_el(const std::vector<LinkPrediction>& instances) {
  double correct = 0, predicted = 0;
  for (const auto& inst : instances) {
    if (!inst.predicted) continue;
    predicted += 1;
    if (*inst.predicted == inst.gold) correct += 1;
  }
  PRF r;
  if (predicted > 0)
    r.precision = correct / predicted;
  else
    r.precision_undefined = true;
  r.recall = instances.empty() ? 0.0 : correct / static_cast<double>(instances.size());
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

double average_precision(const RankedPrediction& p) {
  if (p.gold.empty()) return 0.0;
  double hits = 0, sum = 0;
  for (std::size_t i = 0; i < p.ranked.size(); ++i) {
    if (!p.gold.count(p.ranked[i])) continue;
    hits += 1;
    sum += hits / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(p.gold.size());
}

double mean_average_precision(const std::vector<RankedPrediction>& predictions) {
  if (predictions.empty()) return 0.0;
  double total = 0;
  for (const auto& p : predictions) total += average_precision(p);
  return total / static_cast<double>(predictions.size());
}

double precision_at_k(const std::vector<RankedPrediction>& predictions, std::size_t k) {
  if (k == 0) throw std::invalid_argument("precision_at_k requires k >= 1");
  if (predictions.empty()) return 0.0;
  double total = 0;
  for (const auto& p : predictions) {
    double hits = 0;
    for (std::size_t i = 0; i < std::min(k, p.ranked.size()); ++i)
      if (p.gold.count(p.ranked[i])) hits += 1;
    total += hits / static_cast<double>(k);
  }
  return total / static_cast<double>(predictions.size());
}

double hits_at_k(const std::vector<RankedPrediction>& predictions, std::size_t k) {
  if (k == 0) throw std::invalid_argument("hits_at_k requires k >= 1");
  if (predictions.empty()) return 0.0;
  double total = 0;
  for (const auto& p : predictions) {
    for (std::size_t i = 0; i < std::min(k, p.ranked.size()); ++i)
      if (p.gold.count(p.ranked[i])) {
        total += 1;
        break;
      }
  }
  return total / static_cast<double>(predictions.size());
}

double candidate_recall(const std::vector<RankedPrediction>& candidates) {
  double found = 0, total = 0;
  for (const auto& c : candidates) {
    const std::set<std::int64_t> have(c.ranked.begin(), c.ranked.end());
    for (auto g : c.gold) {
      total += 1;
      if (have.count(g)) found += 1;
    }
  }
  return total > 0 ? found / total : 0.0;
}

double accuracy(const std::vector<std::int64_t>& top1, const std::vector<std::int64_t>& golds) {
  if (top1.size() != golds.size()) throw ShapeMismatch("accuracy: prediction and gold counts differ");
  if (top1.empty()) return 0.0;
  double c = 0;
  for (std::size_t i = 0; i < top1.size(); ++i)
    if (top1[i] == golds[i]) c += 1;
  return c / static_cast<double>(top1.size());
}

std::vector<RankedPrediction> restrict_to_covered(const std::vector<RankedPrediction>& predictions) {
  std::vector<RankedPrediction> out;
  for (const auto& p : predictions) {
    bool covered = false;
    for (auto id : p.ranked) covered = covered || p.gold.count(id) > 0;
    if (covered) out.push_back(p);
  }
  return out;
}

double random_ranking_map(const std::vector<RankedPrediction>& predictions, int trials, std::uint64_t seed) {
  if (predictions.empty() || trials <= 0) return 0.0;
  Rng rng(seed);
  double total = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<RankedPrediction> shuffled = predictions;
    for (auto& p : shuffled) rng.shuffle(std::span<std::int64_t>(p.ranked));
    total += mean_average_precision(shuffled);
  }
  return total / trials;
}

}  // namespace turl::metrics
