#pragma once

// Evaluation surface: multi-label ranking metrics, bidirectional top-1
// retrieval, radial/entailment diagnostics and the embedding export format.
// Tie handling is deterministic everywhere: ranking ties break by ascending
// sample index, retrieval ties count as misses, AUC uses midranks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "lnn/manifold.hpp"
#include "lnn/model.hpp"
#include "lnn/serialize.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

struct ClassifMetrics {
  double map = 0.0;
  double auc = 0.0;
  double hamming = 0.0;
  std::size_t evaluated_classes = 0;
};

inline json classif_metrics_to_json(const ClassifMetrics& m) {
  return json{{"mAP", m.map},
              {"AUC", m.auc},
              {"hamming", m.hamming},
              {"evaluated_classes", m.evaluated_classes}};
}

// scores [N x C] against multi-hot targets. Classes without both a positive
// and a negative are skipped in the macro averages.
inline ClassifMetrics multilabel_metrics(const Tensor<double>& scores,
                                         const Tensor<std::uint8_t>& targets) {
  if (scores.shape() != targets.shape() || scores.rank() != 2)
    throw dim_error("metrics expect matching [N x C] scores and targets");
  const std::size_t n = scores.shape()[0], c = scores.shape()[1];
  ClassifMetrics out;
  double map_sum = 0.0, auc_sum = 0.0;
  std::size_t ham_err = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool t = targets.at(i, k) != 0;
      pos += t ? 1u : 0u;
      if ((scores.at(i, k) > 0.0) != t) ++ham_err;
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) continue;
    ++out.evaluated_classes;

    // ranking by descending score, ties by ascending sample index
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores.at(a, k) != scores.at(b, k)) return scores.at(a, k) > scores.at(b, k);
      return a < b;
    });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r)
      if (targets.at(order[r], k) != 0) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    map_sum += ap / static_cast<double>(pos);

    // rank-based AUC with midranks over ascending scores
    std::vector<std::size_t> asc(n);
    for (std::size_t i = 0; i < n; ++i) asc[i] = i;
    std::sort(asc.begin(), asc.end(), [&](std::size_t a, std::size_t b) {
      if (scores.at(a, k) != scores.at(b, k)) return scores.at(a, k) < scores.at(b, k);
      return a < b;
    });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && scores.at(asc[j + 1], k) == scores.at(asc[i], k)) ++j;
      const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
      for (std::size_t q = i; q <= j; ++q)
        if (targets.at(asc[q], k) != 0) rank_sum_pos += midrank;
      i = j + 1;
    }
    const double p = static_cast<double>(pos);
    auc_sum += (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
  }
  if (out.evaluated_classes == 0)
    throw usage_error("no class has both a positive and a negative");
  out.map = map_sum / static_cast<double>(out.evaluated_classes);
  out.auc = auc_sum / static_cast<double>(out.evaluated_classes);
  out.hamming = static_cast<double>(ham_err) / static_cast<double>(n * c);
  return out;
}

// ---------------------------------------------------------------------------
// Pooled embedding sets and retrieval
// ---------------------------------------------------------------------------

// One embedding per row. Lorentz rows are ambient (time first, length d+1);
// Euclidean rows are plain vectors.
struct PooledSet {
  Tensor<double> rows;
  Geometry geometry = Geometry::Lorentz;
  double curvature = 1.0;

  std::size_t count() const { return rows.shape()[0]; }

  LorentzPoint<double> point(std::size_t i) const {
    LorentzPoint<double> p;
    p.time = rows.at(i, 0);
    for (std::size_t j = 1; j < rows.last(); ++j) p.spatial.push_back(rows.at(i, j));
    return p;
  }

  double radius_of(std::size_t i) const {
    if (geometry == Geometry::Lorentz) return radius(point(i), Curvature(curvature));
    double s = 0;
    for (std::size_t j = 0; j < rows.last(); ++j) s += rows.at(i, j) * rows.at(i, j);
    return std::sqrt(s);
  }
};

namespace detail {

inline double similarity(const PooledSet& a, std::size_t i, const PooledSet& b, std::size_t j) {
  if (a.geometry == Geometry::Lorentz)
    return -static_cast<double>(distance(a.point(i), b.point(j), Curvature(a.curvature)));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.rows.last(); ++k) {
    dot += a.rows.at(i, k) * b.rows.at(j, k);
    na += a.rows.at(i, k) * a.rows.at(i, k);
    nb += b.rows.at(j, k) * b.rows.at(j, k);
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

// Fraction of queries whose matched candidate is the strict argmax.
inline double top1(const PooledSet& queries, const PooledSet& candidates) {
  const std::size_t m = queries.count();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double self = similarity(queries, i, candidates, i);
    bool hit = true;
    for (std::size_t k = 0; k < m && hit; ++k)
      if (k != i && similarity(queries, i, candidates, k) >= self) hit = false;
    hits += hit ? 1u : 0u;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

}  // namespace detail

struct RetrievalResult {
  double image_top1 = 0.0;  // brain query -> image candidates
  double brain_top1 = 0.0;  // image query -> brain candidates
};

inline RetrievalResult retrieval(const PooledSet& images, const PooledSet& brains) {
  if (images.count() != brains.count() || images.count() < 2)
    throw usage_error("retrieval needs matched pools with at least 2 entries");
  RetrievalResult r;
  r.image_top1 = detail::top1(brains, images);
  r.brain_top1 = detail::top1(images, brains);
  return r;
}

// ---------------------------------------------------------------------------
// Geometry report
// ---------------------------------------------------------------------------

struct GeometryReport {
  double image_radius_mean = 0.0, image_radius_median = 0.0;
  double brain_radius_mean = 0.0, brain_radius_median = 0.0;
  double hist_lo = 0.0, hist_hi = 0.0;
  std::vector<std::size_t> image_hist, brain_hist;  // 32 bins over shared range
  double image_inner_fraction = 0.0;  // radius(I_i) < radius(U_i)
  double violation_rate = 0.0;        // exterior angle exceeds aperture
  static constexpr std::size_t kBins = 32;
};

inline json geometry_report_to_json(const GeometryReport& g) {
  return json{{"image_radius", json{{"mean", g.image_radius_mean}, {"median", g.image_radius_median}}},
              {"brain_radius", json{{"mean", g.brain_radius_mean}, {"median", g.brain_radius_median}}},
              {"histogram",
               json{{"bins", GeometryReport::kBins},
                    {"lo", g.hist_lo},
                    {"hi", g.hist_hi},
                    {"image", g.image_hist},
                    {"brain", g.brain_hist}}},
              {"image_inner_fraction", g.image_inner_fraction},
              {"violation_rate", g.violation_rate}};
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline GeometryReport geometry_report(const PooledSet& images, const PooledSet& brains, double K) {
  if (images.count() != brains.count() || images.count() == 0)
    throw usage_error("geometry report needs matched non-empty pools");
  GeometryReport g;
  const std::size_t m = images.count();
  std::vector<double> ri(m), ru(m);
  for (std::size_t i = 0; i < m; ++i) {
    ri[i] = images.radius_of(i);
    ru[i] = brains.radius_of(i);
  }
  double lo = ri[0], hi = ri[0];
  double si = 0, su = 0;
  std::size_t inner = 0;
  for (std::size_t i = 0; i < m; ++i) {
    si += ri[i];
    su += ru[i];
    lo = std::min({lo, ri[i], ru[i]});
    hi = std::max({hi, ri[i], ru[i]});
    if (ri[i] < ru[i]) ++inner;
  }
  g.image_radius_mean = si / static_cast<double>(m);
  g.brain_radius_mean = su / static_cast<double>(m);
  g.image_radius_median = detail::median(ri);
  g.brain_radius_median = detail::median(ru);
  g.hist_lo = lo;
  g.hist_hi = hi;
  g.image_hist.assign(GeometryReport::kBins, 0);
  g.brain_hist.assign(GeometryReport::kBins, 0);
  const double width = hi > lo ? (hi - lo) : 1.0;
  auto bin = [&](double r) {
    auto b = static_cast<std::size_t>((r - lo) / width * GeometryReport::kBins);
    return std::min(b, GeometryReport::kBins - 1);
  };
  for (std::size_t i = 0; i < m; ++i) {
    ++g.image_hist[bin(ri[i])];
    ++g.brain_hist[bin(ru[i])];
  }
  g.image_inner_fraction = static_cast<double>(inner) / static_cast<double>(m);

  if (images.geometry == Geometry::Lorentz) {
    Curvature c(images.curvature);
    std::size_t violated = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto x = images.point(i);
      const auto y = brains.point(i);
      if (exterior_angle(x, y, c) > aperture(x, c, K)) ++violated;
    }
    g.violation_rate = static_cast<double>(violated) / static_cast<double>(m);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// CSV with one row per embedding (modality, id, radius, ambient coordinates)
// plus a JSON histogram summary. Re-exporting a parsed file is byte-stable.
inline void export_embeddings(const PooledSet& images, const std::vector<std::string>& image_ids,
                              const PooledSet& brains, const std::vector<std::string>& brain_ids,
                              const std::filesystem::path& csv_path,
                              const std::filesystem::path& hist_path) {
  if (image_ids.size() != images.count() || brain_ids.size() != brains.count())
    throw usage_error("id list does not match pool size");
  std::string out = "modality,id,radius";
  for (std::size_t j = 0; j < images.rows.last(); ++j) out += ",x" + std::to_string(j);
  out += "\n";
  auto emit = [&](const PooledSet& set, const std::vector<std::string>& ids,
                  const char* modality) {
    for (std::size_t i = 0; i < set.count(); ++i) {
      out += modality;
      out += ",";
      out += ids[i];
      out += ",";
      out += detail::fmt_double(set.radius_of(i));
      for (std::size_t j = 0; j < set.rows.last(); ++j)
        out += "," + detail::fmt_double(set.rows.at(i, j));
      out += "\n";
    }
  };
  emit(images, image_ids, "image");
  emit(brains, brain_ids, "brain");
  write_text_file(csv_path, out);

  // Standalone radius histogram over the shared observed range (the pools
  // need not be matched here, unlike geometry_report).
  std::vector<double> ri, ru;
  for (std::size_t i = 0; i < images.count(); ++i) ri.push_back(images.radius_of(i));
  for (std::size_t i = 0; i < brains.count(); ++i) ru.push_back(brains.radius_of(i));
  double lo = ri.empty() ? 0.0 : ri[0], hi = lo;
  for (double r : ri) { lo = std::min(lo, r); hi = std::max(hi, r); }
  for (double r : ru) { lo = std::min(lo, r); hi = std::max(hi, r); }
  const double width = hi > lo ? hi - lo : 1.0;
  std::vector<std::size_t> hist_i(GeometryReport::kBins, 0), hist_u(GeometryReport::kBins, 0);
  auto bin = [&](double r) {
    auto b = static_cast<std::size_t>((r - lo) / width * GeometryReport::kBins);
    return std::min(b, GeometryReport::kBins - 1);
  };
  for (double r : ri) ++hist_i[bin(r)];
  for (double r : ru) ++hist_u[bin(r)];
  const json summary{{"bins", GeometryReport::kBins}, {"lo", lo},      {"hi", hi},
                     {"image", hist_i},              {"brain", hist_u}};
  write_text_file(hist_path, summary.dump(2) + "\n");
}

}  // namespace lnn
