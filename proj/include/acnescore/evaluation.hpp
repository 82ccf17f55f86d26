#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acnescore/core.hpp"
#include "acnescore/dataset.hpp"
#include "acnescore/scoring.hpp"

namespace acnescore {

namespace detail {

/// Incremental mean; exact when every value is equal.
inline double running_mean(std::span<const double> v) {
  double m = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) m += (v[i] - m) / static_cast<double>(i + 1);
  return m;
}

}  // namespace detail

/// Root mean squared error of predictions against consensus values.
inline double rmse_vs_consensus(std::span<const double> preds, std::span<const double> consensus) {
  if (preds.size() != consensus.size()) {
    throw Error(ErrorCode::ShapeError, std::to_string(preds.size()) + " predictions vs " +
                                           std::to_string(consensus.size()) + " consensus values");
  }
  if (preds.empty()) throw Error(ErrorCode::EmptyInput, "no predictions");
  double sum = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double r = preds[k] - consensus[k];
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(preds.size()));
}

/// RMSE of predicting the global mean for every image, i.e. the population
/// standard deviation of the consensus values.
inline double baseline_rmse(std::span<const double> consensus) {
  if (consensus.empty()) throw Error(ErrorCode::EmptyInput, "no consensus values");
  const std::vector<double> preds(consensus.size(), detail::running_mean(consensus));
  return rmse_vs_consensus(preds, consensus);
}

// ---------------------------------------------------------------------------
// Panel

struct PanelReport {
  std::map<std::string, double> per_rater_rmse;
  double worst = 0.0;
  double median = 0.0;
  std::optional<double> model_rmse;

  /// Model at least as accurate as the weakest rater.
  std::optional<bool> model_beats_worst() const {
    if (!model_rmse) return std::nullopt;
    return *model_rmse <= worst;
  }
  std::optional<bool> model_beats_median() const {
    if (!model_rmse) return std::nullopt;
    return *model_rmse < median;
  }
};

/// Worst and median of a set of per-rater RMSE values. With an odd panel the
/// median is the middle order statistic (6th of 11).
inline PanelReport panel_statistics(std::map<std::string, double> per_rater,
                                    std::optional<double> model_rmse = std::nullopt) {
  if (per_rater.empty()) throw Error(ErrorCode::EmptyInput, "no raters");
  std::vector<double> values;
  for (const auto& [_, v] : per_rater) values.push_back(v);
  std::sort(values.begin(), values.end());
  PanelReport report;
  report.per_rater_rmse = std::move(per_rater);
  report.worst = values.back();
  const std::size_t n = values.size();
  report.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  report.model_rmse = model_rmse;
  return report;
}

inline std::vector<double> consensus_values(std::span<const GoldenRecord> golden) {
  std::vector<double> out;
  out.reserve(golden.size());
  for (const auto& g : golden) out.push_back(g.consensus.value());
  return out;
}

/// Each rater's labels scored against the panel consensus.
inline PanelReport panel_report(std::span<const GoldenRecord> golden,
                                std::optional<std::span<const double>> model_preds = std::nullopt) {
  if (golden.empty()) throw Error(ErrorCode::EmptyInput, "empty golden set");
  std::set<std::string> raters;
  for (const auto& [r, _] : golden.front().labels) raters.insert(r);
  for (const auto& g : golden) {
    std::set<std::string> these;
    for (const auto& [r, _] : g.labels) these.insert(r);
    if (these != raters) throw Error(ErrorCode::PanelError, "rater set differs on image " + g.image_id);
  }
  const auto consensus = consensus_values(golden);
  std::map<std::string, double> per_rater;
  for (const auto& rater : raters) {
    std::vector<double> preds;
    preds.reserve(golden.size());
    for (const auto& g : golden) preds.push_back(g.label_of(rater)->value());
    per_rater[rater] = rmse_vs_consensus(preds, consensus);
  }
  std::optional<double> model;
  if (model_preds) model = rmse_vs_consensus(*model_preds, consensus);
  return panel_statistics(std::move(per_rater), model);
}

// ---------------------------------------------------------------------------
// Classification view

/// cell(predicted, truth); both 1-based severities.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 5>, 5> counts{};

  std::size_t& cell(int predicted, int truth) {
    return counts[static_cast<std::size_t>(predicted - 1)][static_cast<std::size_t>(truth - 1)];
  }
  std::size_t cell(int predicted, int truth) const {
    return counts[static_cast<std::size_t>(predicted - 1)][static_cast<std::size_t>(truth - 1)];
  }
  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts) {
      for (auto c : row) t += c;
    }
    return t;
  }
  std::size_t truth_total(int truth) const {
    std::size_t t = 0;
    for (int p = 1; p <= 5; ++p) t += cell(p, truth);
    return t;
  }
  std::size_t predicted_total(int predicted) const {
    std::size_t t = 0;
    for (int c = 1; c <= 5; ++c) t += cell(predicted, c);
    return t;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const SeverityLabel> preds, std::span<const SeverityLabel> truths) {
  if (preds.size() != truths.size()) throw Error(ErrorCode::ShapeError, "predictions and truths differ in length");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < preds.size(); ++i) ++m.cell(preds[i].value(), truths[i].value());
  return m;
}

struct Fraction {
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  friend bool operator==(const Fraction&, const Fraction&) = default;
};

/// Diagonal over column total per true class; nullopt when the class never
/// occurs in the truth column.
inline std::array<std::optional<Fraction>, 5> recall_fractions(const ConfusionMatrix& m) {
  std::array<std::optional<Fraction>, 5> out;
  for (int c = 1; c <= 5; ++c) {
    const auto col = m.truth_total(c);
    if (col > 0) out[static_cast<std::size_t>(c - 1)] = Fraction{m.cell(c, c), col};
  }
  return out;
}

inline std::array<std::optional<double>, 5> recall_per_class(const ConfusionMatrix& m) {
  std::array<std::optional<double>, 5> out;
  const auto f = recall_fractions(m);
  for (std::size_t i = 0; i < 5; ++i) {
    if (f[i]) out[i] = f[i]->value();
  }
  return out;
}

/// Sample Pearson correlation.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeError, "pearson inputs differ in length");
  if (a.size() < 2) throw Error(ErrorCode::UndefinedCorrelation, "need at least two points");
  const double ma = detail::running_mean(a);
  const double mb = detail::running_mean(b);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::UndefinedCorrelation, "constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Whole-model evaluation

struct FailedImage {
  std::string image_id;
  std::string reason;
};

struct EvaluationSummary {
  double model_rmse = 0.0;
  double baseline_rmse = 0.0;
  PanelReport panel;
  ConfusionMatrix confusion;
  std::array<std::optional<double>, 5> recall;
  std::optional<double> pearson;
  std::vector<std::string> scored_ids;
  std::vector<double> predictions;
  std::vector<FailedImage> failed;
};

/// Returns the final severity of one golden image. Extraction failures are
/// signalled by throwing acnescore::Error (NoFaceFound, GeometryError, ...).
using GoldenScorer = std::function<SeverityScore(const GoldenRecord&)>;

/// Scores every golden image. Images whose extraction fails are excluded
/// from all metrics and listed in `failed`. The panel and baseline use the
/// scored subset so every number refers to the same images.
inline EvaluationSummary evaluate_model(std::span<const GoldenRecord> golden, const GoldenScorer& score) {
  if (golden.empty()) throw Error(ErrorCode::EmptyInput, "empty golden set");
  EvaluationSummary out;
  std::vector<GoldenRecord> scored;
  for (const auto& g : golden) {
    try {
      out.predictions.push_back(score(g).value());
      scored.push_back(g);
      out.scored_ids.push_back(g.image_id);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::NoFaceFound:
        case ErrorCode::GeometryError:
        case ErrorCode::ImageDecodeError:
        case ErrorCode::IoError:
          out.failed.push_back({g.image_id, e.what()});
          break;
        default:
          throw;
      }
    }
  }
  if (scored.empty()) throw Error(ErrorCode::EvaluationError, "every golden image failed extraction");

  const auto consensus = consensus_values(scored);
  out.model_rmse = rmse_vs_consensus(out.predictions, consensus);
  out.baseline_rmse = baseline_rmse(consensus);
  out.panel = panel_report(scored, std::span<const double>(out.predictions));

  std::vector<SeverityLabel> pred_classes;
  std::vector<SeverityLabel> true_classes;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    pred_classes.push_back(discretize(clamp_score(out.predictions[i])));
    true_classes.push_back(discretize(scored[i].consensus));
  }
  out.confusion = confusion(pred_classes, true_classes);
  out.recall = recall_per_class(out.confusion);
  try {
    out.pearson = pearson(out.predictions, consensus);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UndefinedCorrelation) throw;
  }
  return out;
}

inline nlohmann::json to_json(const EvaluationSummary& s) {
  nlohmann::json j;
  j["model_rmse"] = s.model_rmse;
  j["baseline_rmse"] = s.baseline_rmse;
  j["per_rater_rmse"] = s.panel.per_rater_rmse;
  j["worst"] = s.panel.worst;
  j["median"] = s.panel.median;
  j["confusion"] = s.confusion.counts;
  j["recall"] = nlohmann::json::array();
  for (const auto& r : s.recall) j["recall"].push_back(r ? nlohmann::json(*r) : nlohmann::json(nullptr));
  j["pearson"] = s.pearson ? nlohmann::json(*s.pearson) : nlohmann::json(nullptr);
  j["failed_images"] = nlohmann::json::array();
  for (const auto& f : s.failed) j["failed_images"].push_back({{"image_id", f.image_id}, {"reason", f.reason}});
  j["scored_images"] = s.scored_ids.size();
  return j;
}

/// Panel table, worst rater first, with the model's row placed by its RMSE.
inline void print_panel_table(std::ostream& os, const PanelReport& panel) {
  std::vector<std::pair<std::string, double>> rows(panel.per_rater_rmse.begin(), panel.per_rater_rmse.end());
  if (panel.model_rmse) rows.emplace_back("MODEL", *panel.model_rmse);
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  os << std::left << std::setw(16) << "rater" << "rmse\n";
  for (const auto& [name, v] : rows) {
    os << std::left << std::setw(16) << name << std::fixed << std::setprecision(3) << v << '\n';
  }
  os << "worst " << std::setprecision(3) << panel.worst << "  median " << panel.median << '\n';
  if (panel.model_rmse) {
    os << "model beats worst: " << (*panel.model_beats_worst() ? "yes" : "no")
       << "  beats median: " << (*panel.model_beats_median() ? "yes" : "no") << '\n';
  }
  os.unsetf(std::ios::fixed);
}

inline void print_summary(std::ostream& os, const EvaluationSummary& s) {
  print_panel_table(os, s.panel);
  os << std::fixed << std::setprecision(3) << "baseline rmse " << s.baseline_rmse << "  model rmse " << s.model_rmse
     << "  pearson " << (s.pearson ? std::to_string(*s.pearson) : std::string("undefined")) << '\n';
  os << "confusion (rows predicted 1..5, columns true 1..5)\n";
  for (int p = 1; p <= 5; ++p) {
    for (int t = 1; t <= 5; ++t) os << std::setw(6) << s.confusion.cell(p, t);
    os << '\n';
  }
  os << "recall";
  for (const auto& r : s.recall) os << "  " << (r ? std::to_string(*r) : std::string("n/a"));
  os << "\nscored " << s.scored_ids.size() << "  failed " << s.failed.size() << '\n';
  os.unsetf(std::ios::fixed);
}

}  // namespace acnescore
