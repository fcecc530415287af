#include "dagh/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace dagh {

RelevanceFn label_relevance(std::vector<LabelSet> queries, std::vector<LabelSet> gallery) {
  return [q = std::move(queries), g = std::move(gallery)](std::size_t qi, std::size_t gi) {
    return pairwise_label(q.at(qi), g.at(gi)) == 1;
  };
}

double average_precision(const RankingResult& ranking, const std::vector<std::uint8_t>& relevance,
                         int cutoff) {
  if (cutoff < 1) throw InvalidInput("average_precision: cutoff must be >= 1");
  std::size_t total = 0;
  for (auto r : relevance) total += r ? 1 : 0;
  if (total == 0) return 0.0;
  const std::size_t depth = std::min(ranking.ids.size(), static_cast<std::size_t>(cutoff));
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (!relevance.at(static_cast<std::size_t>(ranking.ids[i]))) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(total, static_cast<std::size_t>(cutoff)));
}

namespace {

void check_queries(const CodeMatrix& queries, const PackedCodes& gallery) {
  if (queries.rows() == 0) throw InvalidInput("evaluation needs a non-empty query set");
  if (queries.cols() != gallery.code_length())
    throw InvalidInput("query code length " + std::to_string(queries.cols()) +
                       " does not match gallery code length " +
                       std::to_string(gallery.code_length()));
}

std::vector<std::uint8_t> relevance_row(const RelevanceFn& relevant, std::size_t q,
                                        std::size_t n) {
  std::vector<std::uint8_t> rel(n);
  for (std::size_t g = 0; g < n; ++g) rel[g] = relevant(q, g) ? 1 : 0;
  return rel;
}

RankingResult rank_row(const CodeMatrix& queries, Eigen::Index q, const PackedCodes& gallery) {
  return rank_gallery(queries.row(q).transpose(), gallery, q);
}

}  // namespace

double mean_average_precision(const CodeMatrix& queries, const PackedCodes& gallery,
                              const RelevanceFn& relevant, int cutoff) {
  check_queries(queries, gallery);
  double sum = 0.0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q)
    sum += average_precision(rank_row(queries, q, gallery),
                             relevance_row(relevant, static_cast<std::size_t>(q), gallery.size()),
                             cutoff);
  return sum / static_cast<double>(queries.rows());
}

double precision_at_hamming(const CodeMatrix& queries, const PackedCodes& gallery,
                            const RelevanceFn& relevant, int radius) {
  check_queries(queries, gallery);
  if (radius < 0) throw InvalidInput("precision_at_hamming: radius must be >= 0");
  // every item lies within radius K
  const int r = std::min(radius, gallery.code_length());
  double sum = 0.0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const auto hits = within_radius(queries.row(q).transpose(), gallery, r);
    if (hits.empty()) continue;
    std::size_t good = 0;
    for (auto g : hits) good += relevant(static_cast<std::size_t>(q), static_cast<std::size_t>(g));
    sum += static_cast<double>(good) / static_cast<double>(hits.size());
  }
  return sum / static_cast<double>(queries.rows());
}

std::vector<PrPoint> pr_curve(const CodeMatrix& queries, const PackedCodes& gallery,
                              const RelevanceFn& relevant) {
  check_queries(queries, gallery);
  const std::size_t n = gallery.size();
  std::vector<PrPoint> curve(n);
  std::size_t counted = 0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const auto rel = relevance_row(relevant, static_cast<std::size_t>(q), n);
    const auto total = static_cast<std::size_t>(std::count(rel.begin(), rel.end(), 1));
    if (total == 0) continue;
    ++counted;
    const auto ranking = rank_row(queries, q, gallery);
    std::size_t hits = 0;
    for (std::size_t d = 0; d < n; ++d) {
      hits += rel[static_cast<std::size_t>(ranking.ids[d])];
      curve[d].recall += static_cast<double>(hits) / static_cast<double>(total);
      curve[d].precision += static_cast<double>(hits) / static_cast<double>(d + 1);
    }
  }
  if (counted == 0) return {};
  for (auto& p : curve) {
    p.recall /= static_cast<double>(counted);
    p.precision /= static_cast<double>(counted);
  }
  return curve;
}

std::vector<std::pair<int, double>> precision_at_topN(const CodeMatrix& queries,
                                                      const PackedCodes& gallery,
                                                      const RelevanceFn& relevant,
                                                      const std::vector<int>& ns) {
  check_queries(queries, gallery);
  for (int n : ns)
    if (n < 1 || static_cast<std::size_t>(n) > gallery.size())
      throw InvalidInput("precision_at_topN: n = " + std::to_string(n) + " outside [1, " +
                         std::to_string(gallery.size()) + "]");
  std::vector<std::pair<int, double>> out;
  for (int n : ns) out.emplace_back(n, 0.0);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const auto ranking = rank_row(queries, q, gallery);
    for (auto& [n, prec] : out) {
      std::size_t hits = 0;
      for (int i = 0; i < n; ++i)
        hits += relevant(static_cast<std::size_t>(q), static_cast<std::size_t>(ranking.ids[static_cast<std::size_t>(i)]));
      prec += static_cast<double>(hits) / n;
    }
  }
  for (auto& [n, prec] : out) prec /= static_cast<double>(queries.rows());
  return out;
}

Eigen::MatrixXd bit_correlation(const CodeMatrix& codes) {
  if (codes.rows() < 2) throw InvalidInput("bit_correlation needs at least 2 codes");
  const Eigen::MatrixXd x = codes.cast<double>();
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered;
  const Eigen::Index k = x.cols();
  Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i == j) continue;
      const double denom = std::sqrt(cov(i, i) * cov(j, j));
      corr(i, j) = denom > 0.0 ? cov(i, j) / denom : 0.0;
    }
  return corr;
}

double mean_abs_off_diagonal(const Eigen::MatrixXd& corr) {
  const Eigen::Index k = corr.rows();
  if (k < 2) return 0.0;
  const double off = corr.cwiseAbs().sum() - corr.diagonal().cwiseAbs().sum();
  return off / static_cast<double>(k * (k - 1));
}

EvalReport evaluate(const CodeMatrix& queries, const PackedCodes& gallery,
                    const RelevanceFn& relevant, int cutoff, const std::vector<int>& ns) {
  EvalReport r;
  r.code_length = gallery.code_length();
  r.map_cutoff = cutoff;
  r.map = mean_average_precision(queries, gallery, relevant, cutoff);
  r.p_at_h2 = precision_at_hamming(queries, gallery, relevant, 2);
  r.pr = pr_curve(queries, gallery, relevant);
  // depths beyond the gallery are dropped rather than rejected
  std::vector<int> clipped;
  for (int n : ns)
    if (n >= 1 && static_cast<std::size_t>(n) <= gallery.size()) clipped.push_back(n);
  r.p_at_n = precision_at_topN(queries, gallery, relevant, clipped);
  r.bit_correlation = bit_correlation(unpack(gallery));
  r.bit_correlation_mean_abs = mean_abs_off_diagonal(r.bit_correlation);
  return r;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["k"] = report.code_length;
  j["map"] = report.map;
  j["map_cutoff"] = report.map_cutoff;
  j["p_at_h2"] = report.p_at_h2;
  auto& pr = j["pr_curve"] = nlohmann::json::array();
  for (const auto& p : report.pr) pr.push_back({p.recall, p.precision});
  auto& pn = j["p_at_n"] = nlohmann::json::array();
  for (const auto& [n, p] : report.p_at_n) pn.push_back({n, p});
  auto& rows = j["bit_correlation"]["matrix"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < report.bit_correlation.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(report.bit_correlation.cols()));
    for (Eigen::Index c = 0; c < report.bit_correlation.cols(); ++c)
      row[static_cast<std::size_t>(c)] = report.bit_correlation(i, c);
    rows.push_back(row);
  }
  j["bit_correlation"]["mean_abs_off_diagonal"] = report.bit_correlation_mean_abs;
  j["timing"]["encode_us_per_image"] =
      report.encode_us_per_image ? nlohmann::json(*report.encode_us_per_image) : nlohmann::json();
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.code_length = j.at("k").get<int>();
  r.map = j.at("map").get<double>();
  r.map_cutoff = j.value("map_cutoff", 0);
  r.p_at_h2 = j.at("p_at_h2").get<double>();
  for (const auto& p : j.at("pr_curve")) r.pr.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  for (const auto& p : j.at("p_at_n")) r.p_at_n.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
  const auto& rows = j.at("bit_correlation").at("matrix");
  const auto k = static_cast<Eigen::Index>(rows.size());
  r.bit_correlation.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index c = 0; c < k; ++c)
      r.bit_correlation(i, c) = rows.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c)).get<double>();
  r.bit_correlation_mean_abs = j.at("bit_correlation").at("mean_abs_off_diagonal").get<double>();
  const auto& t = j.at("timing").at("encode_us_per_image");
  if (!t.is_null()) r.encode_us_per_image = t.get<double>();
  return r;
}

}  // namespace dagh
