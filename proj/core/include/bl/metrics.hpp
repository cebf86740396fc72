#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bl/label_map.hpp"

namespace bl {

struct ClassIou {
  std::string name;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double iou = 0.0;
  bool absent = false;  // in neither prediction nor ground truth; scored 1
};

struct FoldReport {
  std::vector<ClassIou> per_class;
  double miou = 0.0;

  [[nodiscard]] double iou(const std::string& name) const;
  [[nodiscard]] bool any_absent() const;
};

/// Pooled TP/FP/FN per class. Labels index the class list (0 = background,
/// never scored). Merging is plain integer addition.
class IouAccumulator {
 public:
  explicit IouAccumulator(std::vector<std::string> classes);

  void add(const LabelMap& prediction, const LabelMap& truth);
  void merge(const IouAccumulator& other);
  [[nodiscard]] FoldReport report() const;
  [[nodiscard]] std::size_t images() const { return images_; }

 private:
  std::vector<std::string> classes_;
  std::vector<std::uint64_t> tp_, fp_, fn_;
  std::size_t images_ = 0;
};

/// EmptyEvaluation on no images or classes; ShapeMismatch on count or size mismatch.
FoldReport miou(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& truth,
                const std::vector<std::string>& classes);

}  // namespace bl
