#pragma once

#include <utility>
#include <vector>

#include "lgsp/autodiff.hpp"
#include "lgsp/tensor.hpp"

namespace lgsp::classifier {

using ClassId = int;

struct LabeledFeature {
  std::vector<double> feature;
  ClassId label;
};

struct Prediction {
  ClassId label;
  // Cosine score against each prototype, in bank order (ascending class id).
  std::vector<double> scores;
};

// One prototype per registered class, kept sorted by class id. Prototypes are
// parameters so a session can fine-tune them.
class PrototypeBank {
 public:
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<ClassId>& ids() const { return ids_; }
  bool contains(ClassId id) const;
  std::size_t index_of(ClassId id) const;

  const ad::Param& prototype(ClassId id) const;
  ad::Param& prototype(ClassId id);
  std::vector<ad::Param*> parameters();

  // Sets (or replaces) a single class prototype. Zero-norm vectors are rejected.
  void set(ClassId id, std::vector<double> prototype);

  // Mean feature per class present in `features`; other classes untouched.
  void fit(const std::vector<LabeledFeature>& features);

  // Prototypes of `classes` stacked into [n x d] on the tape.
  ad::Var stacked(ad::Tape& tape, const std::vector<ClassId>& classes);

 private:
  std::vector<ClassId> ids_;
  std::vector<ad::Param> prototypes_;
};

// Per-class arithmetic means in ascending class id order.
std::vector<std::pair<ClassId, std::vector<double>>> class_means(const std::vector<LabeledFeature>& features);

// argmax cosine over all prototypes; ties go to the lowest class id.
Prediction classify(std::span<const double> feature, const PrototypeBank& bank);

// argmax restricted to `allowed` (a subset of bank ids); scores are indexed as
// in the full bank.
ClassId argmax_within(const Prediction& p, const PrototypeBank& bank, const std::vector<ClassId>& allowed);

}  // namespace lgsp::classifier
