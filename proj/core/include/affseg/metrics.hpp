#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affseg/frame.hpp"
#include "affseg/label_map.hpp"
#include "affseg/model.hpp"

namespace affseg {

/// Per-affordance-class pixel counts pooled over an evaluation set.
/// Background (class 0) is excluded everywhere.
class ConfusionCounts {
 public:
  void accumulate(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionCounts& other);

  long tp(int cls) const { return tp_[slot(cls)]; }
  long fp(int cls) const { return fp_[slot(cls)]; }
  long fn(int cls) const { return fn_[slot(cls)]; }

 private:
  static size_t slot(int cls);
  std::array<long, taxonomy::kAffordanceClasses> tp_{};
  std::array<long, taxonomy::kAffordanceClasses> fp_{};
  std::array<long, taxonomy::kAffordanceClasses> fn_{};
};

/// TP / (TP + FP + FN); 1.0 when the class is absent and never predicted.
double iou(const ConfusionCounts& counts, int cls);
/// F1 = 2PR/(P+R); 0 when P+R = 0, 1.0 for an absent, never-predicted class.
double f_score(const ConfusionCounts& counts, int cls);

/// Class weights for the aggregate F-score, taxonomy order
/// (grasp, cut, lift, push, rotate, hammer, squeeze, paint, type).
/// Dominant classes weigh 0.2/0.2/0.1, the rest exactly 1/12.
const std::array<double, taxonomy::kAffordanceClasses>& f_score_weights();
double weighted_f(const std::vector<double>& per_class_f);

struct MetricsReport {
  std::array<double, taxonomy::kAffordanceClasses> per_class_iou{};
  std::array<double, taxonomy::kAffordanceClasses> per_class_f1{};
  double mean_iou = 0.0;
  double mean_f1 = 0.0;
  double weighted_f1 = 0.0;
  int sequences = 0;

  std::string table() const;
  nlohmann::json to_json() const;
};

MetricsReport report_from(const ConfusionCounts& counts, int sequences);

enum class EvalMode { kVideo, kStatic };

/// The single-frame view used by static inference: last frame only,
/// paired with the zero-motion flow colour.
SequenceBatch static_view(const SequenceBatch& batch);

/// Argmax segmentation labels under the given inference mode (no grad).
LabelMap predict_labels(const AffordanceModel& model, const SequenceBatch& batch, EvalMode mode);

/// Runs inference over the set and pools pixel counts. `threads` > 1
/// splits sequences across workers; counts merge associatively so the
/// report is identical either way.
MetricsReport evaluate(const AffordanceModel& model, const std::vector<SequenceBatch>& dataset,
                       EvalMode mode, int threads = 1);

/// Same accumulation driven by an arbitrary predictor (test hook).
MetricsReport evaluate_with(const std::function<LabelMap(const SequenceBatch&)>& predict,
                            const std::vector<SequenceBatch>& dataset);

}  // namespace affseg
