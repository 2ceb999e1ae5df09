#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace satqa {

// Average ranks (1-based); ties share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& v);

// Spearman rank correlation. Tie-free inputs use 1 - 6 sum d^2 / (n (n^2 - 1));
// with ties, the Pearson correlation of the average-rank vectors.
// InsufficientDataError for n < 3, DomainError for a constant input.
double srocc(const std::vector<double>& pred, const std::vector<double>& gt);
// Pearson linear correlation on raw scores (no logistic remapping).
double plcc(const std::vector<double>& pred, const std::vector<double>& gt);

struct FamilyMetric {
  int n = 0;
  std::optional<double> srocc;  // empty when n < 3 or undefined
  std::optional<double> plcc;
};

struct MetricReport {
  std::string dataset;
  std::string protocol;
  std::optional<long long> seed;  // empty for the aggregate row
  double srocc = 0.0;
  double plcc = 0.0;
  int n = 0;
  std::map<std::string, FamilyMetric> per_family;
  std::optional<double> srocc_std;  // aggregate rows only
  std::optional<double> plcc_std;
  std::string polarity = "higher_is_better";

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

// Mean row over per-seed reports (`"seed": "mean"`), with the standard
// deviation across seeds in `srocc_std` / `plcc_std`.
MetricReport aggregate_reports(const std::vector<MetricReport>& reports);

// Per-family SROCC/PLCC; groups smaller than three are marked insufficient.
std::map<std::string, FamilyMetric> per_family_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                                                       const std::vector<std::string>& family);

}  // namespace satqa
