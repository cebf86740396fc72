#include "bl/metrics.hpp"

#include "bl/error.hpp"

namespace bl {

double FoldReport::iou(const std::string& name) const {
  for (const auto& c : per_class)
    if (c.name == name) return c.iou;
  throw Error(ErrorCode::UnknownKey, "no class '" + name + "' in report");
}

bool FoldReport::any_absent() const {
  for (const auto& c : per_class)
    if (c.absent) return true;
  return false;
}

IouAccumulator::IouAccumulator(std::vector<std::string> classes)
    : classes_(std::move(classes)), tp_(classes_.size(), 0), fp_(classes_.size(), 0), fn_(classes_.size(), 0) {
  if (classes_.empty()) throw Error(ErrorCode::EmptyEvaluation, "no classes to score");
}

void IouAccumulator::add(const LabelMap& prediction, const LabelMap& truth) {
  if (prediction.h != truth.h || prediction.w != truth.w || prediction.size() != truth.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction " + std::to_string(prediction.h) + "x" +
                                              std::to_string(prediction.w) + " vs truth " + std::to_string(truth.h) +
                                              "x" + std::to_string(truth.w));
  }
  const auto c = static_cast<std::int32_t>(classes_.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::int32_t p = prediction.labels[i], g = truth.labels[i];
    if (p < 0 || p > c || g < 0 || g > c) {
      throw Error(ErrorCode::UnknownLabel, "label outside 0.." + std::to_string(c));
    }
    if (p == g) {
      if (p > 0) ++tp_[static_cast<std::size_t>(p - 1)];
      continue;
    }
    if (p > 0) ++fp_[static_cast<std::size_t>(p - 1)];
    if (g > 0) ++fn_[static_cast<std::size_t>(g - 1)];
  }
  ++images_;
}

void IouAccumulator::merge(const IouAccumulator& other) {
  if (other.classes_ != classes_) throw Error(ErrorCode::CategoryMismatch, "merging accumulators over different classes");
  for (std::size_t k = 0; k < classes_.size(); ++k) {
    tp_[k] += other.tp_[k];
    fp_[k] += other.fp_[k];
    fn_[k] += other.fn_[k];
  }
  images_ += other.images_;
}

FoldReport IouAccumulator::report() const {
  if (images_ == 0) throw Error(ErrorCode::EmptyEvaluation, "no images evaluated");
  FoldReport r;
  double total = 0.0;
  for (std::size_t k = 0; k < classes_.size(); ++k) {
    ClassIou c{classes_[k], tp_[k], fp_[k], fn_[k], 1.0, false};
    const std::uint64_t denom = c.tp + c.fp + c.fn;
    if (denom == 0) {
      c.absent = true;
    } else {
      c.iou = static_cast<double>(c.tp) / static_cast<double>(denom);
    }
    total += c.iou;
    r.per_class.push_back(std::move(c));
  }
  r.miou = total / static_cast<double>(classes_.size());
  return r;
}

FoldReport miou(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& truth,
                const std::vector<std::string>& classes) {
  if (predictions.empty() || classes.empty()) throw Error(ErrorCode::EmptyEvaluation, "nothing to evaluate");
  if (predictions.size() != truth.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(predictions.size()) + " predictions for " +
                                              std::to_string(truth.size()) + " ground truths");
  }
  IouAccumulator acc(classes);
  for (std::size_t i = 0; i < predictions.size(); ++i) acc.add(predictions[i], truth[i]);
  return acc.report();
}

}  // namespace bl
