#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kgforge/kg.hpp"
#include "kgforge/kge.hpp"
#include "kgforge/text.hpp"

namespace kgforge {

// Ranking/classification metrics and the evaluation protocol.

struct ScoredEdge {
  Triple triple;
  double score = 0.5;  // sigmoid output, strictly inside (0,1)
  int label = 0;       // 1 = positive
};

// Mean over positives of precision at that positive's rank, with scores
// sorted descending. Ties keep input order (stable sort), which the test
// corpus avoids by construction; AP under ties is convention-dependent.
inline double average_precision(std::span<const ScoredEdge> scored) {
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].score > scored[b].score;
  });
  double sum = 0.0;
  std::size_t positives_seen = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (scored[order[rank]].label == 1) {
      ++positives_seen;
      sum += static_cast<double>(positives_seen) / static_cast<double>(rank + 1);
    }
  }
  if (positives_seen == 0)
    throw DataError("average_precision is undefined without positives");
  return sum / static_cast<double>(positives_seen);
}

struct ThresholdMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline ThresholdMetrics threshold_metrics(std::span<const ScoredEdge> scored,
                                          double threshold) {
  ThresholdMetrics m;
  for (const auto& e : scored) {
    const bool predicted = e.score >= threshold;
    if (predicted && e.label == 1)
      ++m.tp;
    else if (predicted)
      ++m.fp;
    else if (e.label == 1)
      ++m.fn;
    else
      ++m.tn;
  }
  if (m.tp + m.fp > 0)
    m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0)
    m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.precision + m.recall > 0.0)
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

inline double f1_score(std::span<const ScoredEdge> scored, double threshold = 0.5) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ConfigError("f1 threshold must lie in (0, 1)");
  return threshold_metrics(scored, threshold).f1;
}

struct RelationPrecision {
  u32 relation = 0;
  double precision = 0.0;
  std::size_t n_pos = 0;  // positive (label 1) edges carrying this relation
};

struct PerRelationReport {
  std::vector<RelationPrecision> rows;        // relations with >= 1 predicted positive
  std::vector<u32> without_predictions;       // omitted relations, noted
};

inline PerRelationReport per_relation_precision(std::span<const ScoredEdge> scored,
                                                double threshold = 0.5) {
  std::map<u32, std::array<std::size_t, 3>> acc;  // relation -> (tp, fp, n_pos)
  for (const auto& e : scored) {
    auto& a = acc[e.triple.relation];
    const bool predicted = e.score >= threshold;
    if (predicted && e.label == 1) ++a[0];
    if (predicted && e.label == 0) ++a[1];
    if (e.label == 1) ++a[2];
  }
  PerRelationReport out;
  for (const auto& [rel, a] : acc) {
    if (a[0] + a[1] == 0) {
      out.without_predictions.push_back(rel);
      continue;
    }
    out.rows.push_back(
        {rel, static_cast<double>(a[0]) / static_cast<double>(a[0] + a[1]), a[2]});
  }
  return out;
}

struct EvalReport {
  double ap = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double threshold = 0.5;
  PerRelationReport per_relation;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  int ratio = 1;
  u64 seed = 0;
};

// Protocol: corrupt the positives at the configured ratio under the eval
// seed, score, and assemble metrics. X and Z come from the trained model.
inline EvalReport evaluate(const KnowledgeGraph& g, std::span<const Triple> positives,
                           const Tensor& entity_emb, const Tensor& z, int ratio,
                           u64 seed, double threshold = 0.5) {
  if (positives.empty()) throw DataError("evaluate: empty positive set");
  std::vector<Triple> negatives = sample_negatives(positives, g, ratio, seed);
  std::vector<ScoredEdge> scored;
  scored.reserve(positives.size() + negatives.size());
  auto pos_scores = predict_links(entity_emb, z, positives);
  auto neg_scores = predict_links(entity_emb, z, negatives);
  for (std::size_t i = 0; i < positives.size(); ++i)
    scored.push_back({positives[i], pos_scores[i], 1});
  for (std::size_t i = 0; i < negatives.size(); ++i)
    scored.push_back({negatives[i], neg_scores[i], 0});

  EvalReport report;
  report.ap = average_precision(scored);
  const auto tm = threshold_metrics(scored, threshold);
  report.f1 = tm.f1;
  report.precision = tm.precision;
  report.recall = tm.recall;
  report.threshold = threshold;
  report.per_relation = per_relation_precision(scored, threshold);
  report.n_pos = positives.size();
  report.n_neg = negatives.size();
  report.ratio = ratio;
  report.seed = seed;
  return report;
}

// ---------------------------------------------------------------------------
// Report files: "key = value" sections plus a per-relation CSV.
// ---------------------------------------------------------------------------

inline void save_report(const EvalReport& r, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write report: " + path);
  os << "[metrics]\n";
  os << "ap = " << format_double(r.ap) << "\n";
  os << "f1 = " << format_double(r.f1) << "\n";
  os << "precision = " << format_double(r.precision) << "\n";
  os << "recall = " << format_double(r.recall) << "\n";
  os << "threshold = " << format_double(r.threshold) << "\n";
  os << "\n[counts]\n";
  os << "positives = " << r.n_pos << "\n";
  os << "negatives = " << r.n_neg << "\n";
  os << "ratio = " << r.ratio << "\n";
  os << "seed = " << r.seed << "\n";
  os << "\n[per_relation]\n";
  for (const auto& row : r.per_relation.rows)
    os << "rel." << row.relation << " = " << format_double(row.precision) << ","
       << row.n_pos << "\n";
  for (u32 rel : r.per_relation.without_predictions)
    os << "rel." << rel << " = no_predicted_positives\n";
}

inline EvalReport load_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open report: " + path);
  EvalReport r;
  std::string line;
  while (std::getline(is, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '[') continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos) continue;
    auto key = trim(t.substr(0, eq));
    auto value = trim(t.substr(eq + 1));
    const std::string ctx = path;
    if (key == "ap") r.ap = parse_double(value, ctx);
    else if (key == "f1") r.f1 = parse_double(value, ctx);
    else if (key == "precision") r.precision = parse_double(value, ctx);
    else if (key == "recall") r.recall = parse_double(value, ctx);
    else if (key == "threshold") r.threshold = parse_double(value, ctx);
    else if (key == "positives") r.n_pos = parse_u64(value, ctx);
    else if (key == "negatives") r.n_neg = parse_u64(value, ctx);
    else if (key == "ratio") r.ratio = static_cast<int>(parse_u64(value, ctx));
    else if (key == "seed") r.seed = parse_u64(value, ctx);
    else if (key.rfind("rel.", 0) == 0) {
      const u32 rel = static_cast<u32>(parse_u64(key.substr(4), ctx));
      if (value == "no_predicted_positives") {
        r.per_relation.without_predictions.push_back(rel);
      } else {
        auto parts = split(value, ',');
        if (parts.size() != 2) throw DataError(ctx + ": bad per-relation row");
        r.per_relation.rows.push_back(
            {rel, parse_double(trim(parts[0]), ctx), parse_u64(trim(parts[1]), ctx)});
      }
    }
  }
  return r;
}

inline void save_per_relation_csv(const EvalReport& r, const KnowledgeGraph& g,
                                  const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write per-relation csv: " + path);
  os << "relation,precision,n_pos\n";
  for (const auto& row : r.per_relation.rows)
    os << g.relations[row.relation] << "," << format_double(row.precision) << ","
       << row.n_pos << "\n";
}

}  // namespace kgforge
