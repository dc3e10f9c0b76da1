#include "oodcal/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "oodcal/errors.hpp"
#include "oodcal/io_util.hpp"

namespace oodcal {
namespace {

void require_scores(const std::vector<double>& v, const char* what) {
  if (v.empty()) throw EmptyInputError(std::string("no ") + what + " scores");
  for (double x : v)
    if (!std::isfinite(x)) throw NonFiniteError(std::string("non-finite ") + what + " score");
}

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

double threshold_at_tpr(const std::vector<double>& id_scores, double tpr) {
  require_scores(id_scores, "ID");
  if (!(tpr > 0.0 && tpr <= 1.0)) throw ParameterError("tpr must lie in (0, 1]");
  const std::size_t n = id_scores.size();
  const double nd = static_cast<double>(n);
  // Smallest count whose fraction reaches tpr, compared the same way a
  // threshold sweep would.
  auto need = static_cast<std::size_t>(std::ceil(tpr * nd));
  need = std::clamp<std::size_t>(need, 1, n);
  while (need > 1 && static_cast<double>(need - 1) / nd >= tpr) --need;
  while (need < n && static_cast<double>(need) / nd < tpr) ++need;

  std::vector<double> sorted = id_scores;
  const auto at = sorted.begin() + static_cast<std::ptrdiff_t>(n - need);
  std::nth_element(sorted.begin(), at, sorted.end());
  return *at;
}

double fpr_at(const std::vector<double>& ood_scores, double lambda) {
  require_scores(ood_scores, "OOD");
  const auto hits = std::count_if(ood_scores.begin(), ood_scores.end(),
                                  [&](double s) { return s >= lambda; });
  return static_cast<double>(hits) / static_cast<double>(ood_scores.size());
}

double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
  require_scores(id_scores, "ID");
  require_scores(ood_scores, "OOD");
  std::vector<double> ids = id_scores, oods = ood_scores;
  std::sort(ids.begin(), ids.end());
  std::sort(oods.begin(), oods.end());
  // Twice the Mann-Whitney U, kept integral so no rounding enters until the
  // final division.
  unsigned long long doubled = 0;
  std::size_t below = 0, upto = 0;
  for (double s : ids) {
    while (below < oods.size() && oods[below] < s) ++below;
    if (upto < below) upto = below;
    while (upto < oods.size() && oods[upto] <= s) ++upto;
    doubled += 2ull * below + (upto - below);
  }
  const double pairs = static_cast<double>(ids.size()) * static_cast<double>(oods.size());
  return static_cast<double>(doubled) / (2.0 * pairs);
}

MetricsReport evaluate(const LabeledScores& scores) {
  MetricsReport r;
  r.threshold_at_95tpr = threshold_at_tpr(scores.id_scores, 0.95);
  r.fpr95 = fpr_at(scores.ood_scores, r.threshold_at_95tpr);
  r.auroc = auroc(scores.id_scores, scores.ood_scores);
  r.n_id = scores.id_scores.size();
  r.n_ood = scores.ood_scores.size();
  return r;
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
  return {{"fpr95", report.fpr95},
          {"auroc", report.auroc},
          {"threshold", report.threshold_at_95tpr},
          {"n_id", report.n_id},
          {"n_ood", report.n_ood}};
}

std::vector<HistogramBin> score_histogram(const LabeledScores& scores, std::size_t bins) {
  if (bins == 0) throw ParameterError("histogram needs at least one bin");
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lo = static_cast<double>(b) / static_cast<double>(bins);
    out[b].hi = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  auto bin_of = [&](double s) {
    const double scaled = std::floor(std::clamp(s, 0.0, 1.0) * static_cast<double>(bins));
    return std::min(static_cast<std::size_t>(scaled), bins - 1);
  };
  for (double s : scores.id_scores) ++out[bin_of(s)].id_count;
  for (double s : scores.ood_scores) ++out[bin_of(s)].ood_count;
  return out;
}

std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  std::string out = "bin_lo,bin_hi,id_count,ood_count\n";
  for (const auto& b : bins) {
    out += io::format_double(b.lo) + "," + io::format_double(b.hi) + "," +
           std::to_string(b.id_count) + "," + std::to_string(b.ood_count) + "\n";
  }
  return out;
}

void append_score_report(const std::string& csv_text, LabeledScores& into) {
  std::size_t pos = 0, line_no = 0;
  std::ptrdiff_t label_col = -1, score_col = -1;
  std::size_t columns = 0;
  while (pos < csv_text.size()) {
    auto end = csv_text.find('\n', pos);
    if (end == std::string::npos) end = csv_text.size();
    std::string_view line(csv_text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split_csv_line(line, line_no);
    if (label_col < 0) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] == "label") label_col = static_cast<std::ptrdiff_t>(i);
        if (fields[i] == "s_max") score_col = static_cast<std::ptrdiff_t>(i);
      }
      if (label_col < 0 || score_col < 0)
        throw ParseError("score report header lacks label or s_max", line_no);
      columns = fields.size();
      continue;
    }
    if (fields.size() != columns) throw ParseError("wrong number of CSV fields", line_no);
    const auto& text = fields[static_cast<std::size_t>(score_col)];
    double v = 0.0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size())
      throw ParseError("bad s_max \"" + text + "\"", line_no);
    const auto& label = fields[static_cast<std::size_t>(label_col)];
    if (label == "id") {
      into.id_scores.push_back(v);
    } else if (label == "ood") {
      into.ood_scores.push_back(v);
    } else {
      throw ParseError("label must be id or ood, got \"" + label + "\"", line_no);
    }
  }
}

}  // namespace oodcal
