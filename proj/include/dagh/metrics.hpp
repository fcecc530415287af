#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dagh/datasets.hpp"
#include "dagh/retrieval.hpp"

namespace dagh {

/// relevant(query index, gallery index)
using RelevanceFn = std::function<bool(std::size_t, std::size_t)>;

/// Shared-label relevance between a query set and a gallery set.
RelevanceFn label_relevance(std::vector<LabelSet> queries, std::vector<LabelSet> gallery);

/// Truncated AP: sum_{i <= cutoff} P(i) rel(i) / min(total_relevant, cutoff);
/// 0 when nothing is relevant. `relevance` is indexed by gallery id.
double average_precision(const RankingResult& ranking, const std::vector<std::uint8_t>& relevance,
                         int cutoff);

double mean_average_precision(const CodeMatrix& queries, const PackedCodes& gallery,
                              const RelevanceFn& relevant, int cutoff);

/// Mean precision of the items within Hamming radius `radius`; a query that
/// retrieves nothing scores 0.
double precision_at_hamming(const CodeMatrix& queries, const PackedCodes& gallery,
                            const RelevanceFn& relevant, int radius = 2);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// Rank-sweep curve: one point per depth 1..N, recall and precision averaged
/// over the queries that have at least one relevant gallery item.
std::vector<PrPoint> pr_curve(const CodeMatrix& queries, const PackedCodes& gallery,
                              const RelevanceFn& relevant);

std::vector<std::pair<int, double>> precision_at_topN(const CodeMatrix& queries,
                                                      const PackedCodes& gallery,
                                                      const RelevanceFn& relevant,
                                                      const std::vector<int>& ns);

/// Pearson correlation between bit columns. Zero-variance columns get 1 on
/// the diagonal and 0 elsewhere.
Eigen::MatrixXd bit_correlation(const CodeMatrix& codes);
double mean_abs_off_diagonal(const Eigen::MatrixXd& corr);

struct EvalReport {
  int code_length = 0;
  int map_cutoff = 0;
  double map = 0.0;
  double p_at_h2 = 0.0;
  std::vector<PrPoint> pr;
  std::vector<std::pair<int, double>> p_at_n;
  Eigen::MatrixXd bit_correlation;
  double bit_correlation_mean_abs = 0.0;
  std::optional<double> encode_us_per_image;
};

EvalReport evaluate(const CodeMatrix& queries, const PackedCodes& gallery,
                    const RelevanceFn& relevant, int cutoff, const std::vector<int>& ns);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace dagh
