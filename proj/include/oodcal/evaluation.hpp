#pragma once

// Detector quality metrics. Higher scores mean "more in-distribution"; a
// sample counts as predicted ID when its score is >= the threshold, on both
// the ID and OOD side.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace oodcal {

struct LabeledScores {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

struct MetricsReport {
  double fpr95 = 0.0;
  double auroc = 0.0;
  double threshold_at_95tpr = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
};

// Largest score lambda with at least ceil(tpr * n) ID scores >= lambda. No
// interpolation.
double threshold_at_tpr(const std::vector<double>& id_scores, double tpr);

// Fraction of OOD scores >= lambda.
double fpr_at(const std::vector<double>& ood_scores, double lambda);

// Mann-Whitney AUROC with half credit for ties, via sorting and exact pair
// counting.
double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

MetricsReport evaluate(const LabeledScores& scores);

nlohmann::json metrics_to_json(const MetricsReport& report);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t id_count = 0;
  std::size_t ood_count = 0;
};

// Equal-width bins over [0, 1]; the last bin is closed. Scores outside the
// range land in the nearest end bin.
std::vector<HistogramBin> score_histogram(const LabeledScores& scores, std::size_t bins);
std::string histogram_csv(const std::vector<HistogramBin>& bins);

// Reads the s_max column of score-report CSVs, split by the label column.
void append_score_report(const std::string& csv_text, LabeledScores& into);

}  // namespace oodcal
