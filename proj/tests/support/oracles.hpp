#pragma once

// Test-side oracles. Each one recomputes a library result from its definition
// with plain loops over raw inputs; none of them calls the code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "turl/baselines.hpp"
#include "turl/corpus.hpp"
#include "turl/encoder.hpp"
#include "turl/encoding.hpp"
#include "turl/numeric.hpp"

namespace oracle {

using turl::encoding::Element;
using turl::encoding::ElementKind;
using turl::encoding::LinearizedSequence;
using turl::numeric::Matrix;

// ---------------------------------------------------------------- visibility

inline bool rule_visible(const Element& a, const Element& b) {
  const auto k1 = a.kind, k2 = b.kind;
  if (k1 == ElementKind::caption_token || k2 == ElementKind::caption_token) return true;
  if (k1 == ElementKind::topic_entity || k2 == ElementKind::topic_entity) return true;
  if (k1 == ElementKind::header_token && k2 == ElementKind::header_token) return true;
  if (k1 == ElementKind::header_token && k2 == ElementKind::cell_entity) return a.column == b.column;
  if (k2 == ElementKind::header_token && k1 == ElementKind::cell_entity) return a.column == b.column;
  if (k1 == ElementKind::cell_entity && k2 == ElementKind::cell_entity) return a.row == b.row || a.column == b.column;
  return false;
}

inline std::vector<std::vector<int>> visibility(const LinearizedSequence& seq) {
  const std::size_t n = seq.size();
  std::vector<std::vector<int>> m(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i][j] = (i == j || rule_visible(seq.elements[i], seq.elements[j])) ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------- reference encoder
// Textbook post-norm Transformer with full attention. Every dot product runs
// over the inner index in ascending order from 0, like the library kernels,
// so with everything visible the results must agree bit for bit.

template <typename Real>
Matrix<Real> mm(const Matrix<Real>& a, const Matrix<Real>& b) {
  Matrix<Real> c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      Real s = 0;
      for (std::size_t p = 0; p < a.cols; ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

template <typename Real>
Matrix<Real> lin(const Matrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& b) {
  Matrix<Real> y = mm(x, w);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += b(0, j);
  return y;
}

template <typename Real>
Matrix<Real> plus(const Matrix<Real>& a, const Matrix<Real>& b) {
  Matrix<Real> c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] + b.data[i];
  return c;
}

template <typename Real>
Matrix<Real> norm(const Matrix<Real>& x, const Matrix<Real>& g, const Matrix<Real>& b) {
  Matrix<Real> y(x.rows, x.cols);
  const Real eps = Real(turl::numeric::kLayerNormEps);
  for (std::size_t i = 0; i < x.rows; ++i) {
    Real mu = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mu += x(i, j);
    mu /= Real(x.cols);
    Real var = 0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= Real(x.cols);
    const Real r = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols; ++j) y(i, j) = g(0, j) * ((x(i, j) - mu) * r) + b(0, j);
  }
  return y;
}

template <typename Real>
Matrix<Real> block(const Matrix<Real>& h, const turl::encoder::BlockWeights<Real>& w, int heads) {
  const std::size_t n = h.rows, d = h.cols, dh = d / static_cast<std::size_t>(heads);
  const Matrix<Real> q = lin(h, w.wq.value, w.bq.value);
  const Matrix<Real> k = lin(h, w.wk.value, w.bk.value);
  const Matrix<Real> v = lin(h, w.wv.value, w.bv.value);
  const Real sc = Real(1) / std::sqrt(Real(dh));
  Matrix<Real> cat(n, d);
  for (int hd = 0; hd < heads; ++hd) {
    const std::size_t o = static_cast<std::size_t>(hd) * dh;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Real> p(n);
      for (std::size_t j = 0; j < n; ++j) {
        Real s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, o + c) * k(j, o + c);
        p[j] = s * sc;
      }
      const Real mx = *std::max_element(p.begin(), p.end());
      Real z = 0;
      for (auto& x : p) {
        x = std::exp(x - mx);
        z += x;
      }
      for (auto& x : p) x /= z;
      for (std::size_t c = 0; c < dh; ++c) {
        Real s = 0;
        for (std::size_t j = 0; j < n; ++j) s += p[j] * v(j, o + c);
        cat(i, o + c) = s;
      }
    }
  }
  const Matrix<Real> h1 = norm(plus(h, lin(cat, w.wo.value, w.bo.value)), w.ln1_gamma.value, w.ln1_beta.value);
  Matrix<Real> mid = lin(h1, w.w1.value, w.b1.value);
  for (auto& x : mid.data) x = Real(0.5) * x * (Real(1) + std::erf(x / std::sqrt(Real(2))));
  return norm(plus(h1, lin(mid, w.w2.value, w.b2.value)), w.ln2_gamma.value, w.ln2_beta.value);
}

template <typename Real>
Matrix<Real> embed(const LinearizedSequence& seq, const turl::encoder::ModelWeights<Real>& w) {
  const std::size_t d = static_cast<std::size_t>(w.config.d_model);
  Matrix<Real> h(seq.size(), d);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& e = seq.elements[i];
    if (e.is_token()) {
      for (std::size_t j = 0; j < d; ++j)
        h(i, j) = (w.word.value(e.id, j) + w.token_type.value(e.seg_type, j)) + w.position.value(e.position, j);
      continue;
    }
    Matrix<Real> x(1, 2 * d);
    for (std::size_t j = 0; j < d; ++j) x(0, j) = w.entity.value(e.id, j);
    if (!e.mention.empty()) {
      for (std::size_t j = 0; j < d; ++j) {
        Real s = 0;
        for (int m : e.mention) s += w.word.value(m, j);
        x(0, d + j) = s * (Real(1) / Real(e.mention.size()));
      }
    }
    const Matrix<Real> f = lin(x, w.fuse_w.value, w.fuse_b.value);
    for (std::size_t j = 0; j < d; ++j) h(i, j) = f(0, j) + w.entity_type.value(e.seg_type, j);
  }
  return h;
}

template <typename Real>
Matrix<Real> encode(const LinearizedSequence& seq, const turl::encoder::ModelWeights<Real>& w) {
  Matrix<Real> h = embed(seq, w);
  for (const auto& b : w.blocks) h = block(h, b, w.config.num_heads);
  return h;
}

// ---------------------------------------------------------------- finite differences

struct FdResult {
  double max_rel = 0.0;
  std::size_t coords = 0;
};

/// Central-difference gradient check: rel = |a - n| / max(|a|, |n|, floor).
inline FdResult finite_difference(const std::function<double()>& f, const std::function<void()>& analytic,
                                  const std::vector<turl::numeric::Tensor<double>*>& params, double eps, double floor) {
  for (auto* p : params) p->zero_grad();
  analytic();
  FdResult r;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data[i];
      p->value.data[i] = keep + eps;
      const double up = f();
      p->value.data[i] = keep - eps;
      const double dn = f();
      p->value.data[i] = keep;
      const double num = (up - dn) / (2 * eps);
      const double a = p->grad.data[i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      r.max_rel = std::max(r.max_rel, rel);
      ++r.coords;
    }
  }
  return r;
}

// ---------------------------------------------------------------- BM25

inline double bm25(const std::vector<std::vector<std::string>>& docs, const std::vector<std::string>& query,
                   std::size_t doc, double k1 = 1.2, double b = 0.75) {
  const double n = static_cast<double>(docs.size());
  double total = 0;
  for (const auto& d : docs) total += static_cast<double>(d.size());
  const double avg = total / n;
  const std::set<std::string> terms(query.begin(), query.end());
  double score = 0;
  for (const auto& t : terms) {
    double df = 0;
    for (const auto& d : docs) df += std::count(d.begin(), d.end(), t) > 0 ? 1 : 0;
    const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), t));
    if (tf == 0) continue;
    const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    const double len = static_cast<double>(docs[doc].size());
    score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / avg));
  }
  return score;
}

// ---------------------------------------------------------------- P(h'|h)
// Enumerates unordered table pairs; a pair supports (h', h) when some
// (subject, object) fact appears under h' in one table and under h in the other.

struct Fact {
  std::string subject, object, header;
};

inline std::vector<Fact> facts_of(const turl::corpus::ProcessedTable& t) {
  std::vector<Fact> out;
  if (!t.subject_column) return out;
  for (const auto& s : t.cells) {
    if (s.column != *t.subject_column) continue;
    for (const auto& o : t.cells)
      if (o.row == s.row && o.column != s.column)
        out.push_back({s.entity_id, o.entity_id, t.header_texts[static_cast<std::size_t>(o.column)]});
  }
  return out;
}

inline std::map<std::pair<std::string, std::string>, long> pair_counts(
    const std::vector<turl::corpus::ProcessedTable>& tables) {
  std::map<std::pair<std::string, std::string>, long> n;  // (h', h)
  for (std::size_t i = 0; i < tables.size(); ++i)
    for (std::size_t j = i + 1; j < tables.size(); ++j) {
      std::set<std::pair<std::string, std::string>> seen;
      const auto fi = facts_of(tables[i]), fj = facts_of(tables[j]);
      for (const auto& a : fi)
        for (const auto& b : fj)
          if (a.subject == b.subject && a.object == b.object) {
            seen.insert({a.header, b.header});
            seen.insert({b.header, a.header});
          }
      for (const auto& p : seen) ++n[p];
    }
  return n;
}

inline double relatedness(const std::vector<turl::corpus::ProcessedTable>& tables, const std::string& hp,
                          const std::string& h) {
  const auto n = pair_counts(tables);
  long num = 0, den = 0;
  for (const auto& [k, c] : n) {
    if (k.second != h) continue;
    den += c;
    if (k.first == hp) num += c;
  }
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// ---------------------------------------------------------------- kNN schema augmentation

inline std::map<std::string, double> tfidf(const std::vector<std::vector<std::string>>& docs,
                                           const std::vector<std::string>& text) {
  std::map<std::string, double> v;
  std::set<std::string> terms(text.begin(), text.end());
  for (const auto& t : terms) {
    double df = 0;
    for (const auto& d : docs) df += std::find(d.begin(), d.end(), t) != d.end() ? 1 : 0;
    if (df == 0) continue;
    const double tf = static_cast<double>(std::count(text.begin(), text.end(), t));
    const double w = tf * std::log(static_cast<double>(docs.size()) / df);
    if (w != 0) v[t] = w;
  }
  return v;
}

inline double cos(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [t, x] : a) {
    na += x * x;
    if (b.count(t)) dot += x * b.at(t);
  }
  for (const auto& [t, x] : b) nb += x * x;
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// captions[i] / schemas[i] describe table i. Returns header -> score.
inline std::map<std::string, double> knn_scores(const std::vector<std::vector<std::string>>& captions,
                                                const std::vector<std::vector<std::string>>& schemas,
                                                const std::vector<std::string>& query,
                                                const std::vector<std::string>& seeds, std::size_t k) {
  const auto q = tfidf(captions, query);
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const double c = cos(q, tfidf(captions, captions[i]));
    if (c > 0) sims.push_back({c, i});
  }
  std::sort(sims.begin(), sims.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  if (sims.size() > k) sims.resize(k);
  const std::set<std::string> seed_set(seeds.begin(), seeds.end());
  std::map<std::string, double> score;
  for (const auto& [c, i] : sims) {
    const std::set<std::string> schema(schemas[i].begin(), schemas[i].end());
    double w = c;
    if (!seed_set.empty()) {
      double hit = 0;
      for (const auto& s : seed_set) hit += schema.count(s);
      w *= hit / static_cast<double>(seed_set.size());
    }
    for (const auto& h : schema) score[h] += w;
  }
  for (auto it = score.begin(); it != score.end();) {
    if (it->second <= 0 || seed_set.count(it->first))
      it = score.erase(it);
    else
      ++it;
  }
  return score;
}

// ---------------------------------------------------------------- EL vote

inline std::set<std::string> vote(const std::vector<std::pair<std::string, std::string>>& pairs,
                                  const turl::baselines::RelationMap& rel, double threshold) {
  std::set<std::string> all;
  for (const auto& p : pairs)
    if (rel.count(p)) all.insert(rel.at(p).begin(), rel.at(p).end());
  std::set<std::string> out;
  for (const auto& r : all) {
    double hold = 0;
    for (const auto& p : pairs) hold += rel.count(p) && rel.at(p).count(r) ? 1 : 0;
    if (hold / static_cast<double>(pairs.size()) >= threshold) out.insert(r);
  }
  return out;
}

}  // namespace oracle
