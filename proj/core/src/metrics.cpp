#include "affseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "affseg/errors.hpp"

namespace affseg {

size_t ConfusionCounts::slot(int cls) {
  if (cls < 1 || cls > taxonomy::kAffordanceClasses) {
    throw std::invalid_argument("metrics: class index " + std::to_string(cls) +
                                " outside [1," + std::to_string(taxonomy::kAffordanceClasses) +
                                "]");
  }
  return static_cast<size_t>(cls - 1);
}

void ConfusionCounts::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw std::invalid_argument("metrics: prediction extent " + std::to_string(pred.h) + "x" +
                                std::to_string(pred.w) + " does not match ground truth " +
                                std::to_string(gt.h) + "x" + std::to_string(gt.w));
  }
  for (size_t i = 0; i < pred.values.size(); ++i) {
    const int p = pred.values[i];
    const int g = gt.values[i];
    if (p > 0) {
      if (p == g) {
        ++tp_[slot(p)];
      } else {
        ++fp_[slot(p)];
      }
    }
    if (g > 0 && g != p) ++fn_[slot(g)];
  }
}

void ConfusionCounts::merge(const ConfusionCounts& other) {
  for (size_t i = 0; i < tp_.size(); ++i) {
    tp_[i] += other.tp_[i];
    fp_[i] += other.fp_[i];
    fn_[i] += other.fn_[i];
  }
}

double iou(const ConfusionCounts& counts, int cls) {
  const long tp = counts.tp(cls), fp = counts.fp(cls), fn = counts.fn(cls);
  const long denom = tp + fp + fn;
  if (denom == 0) return 1.0;  // absent and never predicted
  return static_cast<double>(tp) / static_cast<double>(denom);
}

double f_score(const ConfusionCounts& counts, int cls) {
  const long tp = counts.tp(cls), fp = counts.fp(cls), fn = counts.fn(cls);
  if (tp == 0) {
    return (fp == 0 && fn == 0) ? 1.0 : 0.0;
  }
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * p * r / (p + r);
}

const std::array<double, taxonomy::kAffordanceClasses>& f_score_weights() {
  // grasp, cut, lift, push, rotate, hammer, squeeze, paint, type
  static const std::array<double, taxonomy::kAffordanceClasses> w = {
      0.2, 1.0 / 12.0, 0.2, 0.1, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0};
  return w;
}

double weighted_f(const std::vector<double>& per_class_f) {
  if (per_class_f.size() != taxonomy::kAffordanceClasses) {
    throw std::invalid_argument("weighted_f: expected " +
                                std::to_string(taxonomy::kAffordanceClasses) + " values, got " +
                                std::to_string(per_class_f.size()));
  }
  const auto& w = f_score_weights();
  double acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) acc += w[i] * per_class_f[i];
  return acc;
}

MetricsReport report_from(const ConfusionCounts& counts, int sequences) {
  MetricsReport report;
  report.sequences = sequences;
  std::vector<double> f1(taxonomy::kAffordanceClasses);
  for (int cls = 1; cls <= taxonomy::kAffordanceClasses; ++cls) {
    report.per_class_iou[static_cast<size_t>(cls - 1)] = iou(counts, cls);
    report.per_class_f1[static_cast<size_t>(cls - 1)] = f_score(counts, cls);
    f1[static_cast<size_t>(cls - 1)] = report.per_class_f1[static_cast<size_t>(cls - 1)];
  }
  for (double v : report.per_class_iou) report.mean_iou += v;
  for (double v : report.per_class_f1) report.mean_f1 += v;
  report.mean_iou /= taxonomy::kAffordanceClasses;
  report.mean_f1 /= taxonomy::kAffordanceClasses;
  report.weighted_f1 = weighted_f(f1);
  return report;
}

std::string MetricsReport::table() const {
  std::ostringstream os;
  char buf[32];
  os << "metric   ";
  for (int cls = 1; cls <= taxonomy::kAffordanceClasses; ++cls) {
    std::snprintf(buf, sizeof(buf), " %8s", taxonomy::affordance_names()[static_cast<size_t>(cls)].c_str());
    os << buf;
  }
  os << "\n";
  os << "IoU      ";
  for (double v : per_class_iou) {
    std::snprintf(buf, sizeof(buf), " %8.4f", v);
    os << buf;
  }
  os << "\n";
  os << "F1       ";
  for (double v : per_class_f1) {
    std::snprintf(buf, sizeof(buf), " %8.4f", v);
    os << buf;
  }
  os << "\n";
  std::snprintf(buf, sizeof(buf), "%.4f", mean_iou);
  os << "mean IoU " << buf;
  std::snprintf(buf, sizeof(buf), "%.4f", mean_f1);
  os << " | mean F1 " << buf;
  std::snprintf(buf, sizeof(buf), "%.4f", weighted_f1);
  os << " | weighted F1 " << buf << " | sequences " << sequences << "\n";
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::object();
  for (int cls = 1; cls <= taxonomy::kAffordanceClasses; ++cls) {
    per_class[taxonomy::affordance_names()[static_cast<size_t>(cls)]] = {
        {"iou", per_class_iou[static_cast<size_t>(cls - 1)]},
        {"f1", per_class_f1[static_cast<size_t>(cls - 1)]},
    };
  }
  return nlohmann::json{{"per_class", per_class},
                        {"mean_iou", mean_iou},
                        {"mean_f1", mean_f1},
                        {"weighted_f1", weighted_f1},
                        {"sequences", sequences}};
}

SequenceBatch static_view(const SequenceBatch& batch) {
  if (batch.appearance.empty()) throw std::invalid_argument("static_view: empty batch");
  SequenceBatch view;
  view.appearance = {batch.appearance.back()};
  const TensorPtr& last = batch.appearance.back();
  view.flow = {Tensor::full({3, last->dim(1), last->dim(2)}, 128.0 / 255.0)};
  view.mask = batch.mask;
  view.action_label = batch.action_label;
  return view;
}

LabelMap predict_labels(const AffordanceModel& model, const SequenceBatch& batch, EvalMode mode) {
  NoGradGuard no_grad;
  const SequenceBatch* input = &batch;
  SequenceBatch view;
  if (mode == EvalMode::kStatic) {
    view = static_view(batch);
    input = &view;
  }
  AffordanceModel::Output out = model.forward_sequence(*input);
  const int c = out.seg_logits->dim(0);
  const int h = out.seg_logits->dim(1);
  const int w = out.seg_logits->dim(2);
  const long hw = static_cast<long>(h) * w;
  const double* lv = out.seg_logits->data().data();
  LabelMap labels(h, w);
  for (long p = 0; p < hw; ++p) {
    double best = lv[p];
    int arg = 0;
    for (int ci = 1; ci < c; ++ci) {
      const double v = lv[ci * hw + p];
      if (v > best) {
        best = v;
        arg = ci;
      }
    }
    labels.values[static_cast<size_t>(p)] = arg;
  }
  return labels;
}

MetricsReport evaluate(const AffordanceModel& model, const std::vector<SequenceBatch>& dataset,
                       EvalMode mode, int threads) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  threads = std::max(1, std::min<int>(threads, static_cast<int>(dataset.size())));

  std::vector<ConfusionCounts> partial(static_cast<size_t>(threads));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  auto worker = [&](int tid) {
    try {
      for (size_t i = static_cast<size_t>(tid); i < dataset.size();
           i += static_cast<size_t>(threads)) {
        LabelMap pred = predict_labels(model, dataset[i], mode);
        partial[static_cast<size_t>(tid)].accumulate(pred, dataset[i].mask);
      }
    } catch (...) {
      errors[static_cast<size_t>(tid)] = std::current_exception();
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ConfusionCounts counts;
  for (const auto& p : partial) counts.merge(p);
  return report_from(counts, static_cast<int>(dataset.size()));
}

MetricsReport evaluate_with(const std::function<LabelMap(const SequenceBatch&)>& predict,
                            const std::vector<SequenceBatch>& dataset) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  ConfusionCounts counts;
  for (const auto& batch : dataset) {
    counts.accumulate(predict(batch), batch.mask);
  }
  return report_from(counts, static_cast<int>(dataset.size()));
}

}  // namespace affseg
