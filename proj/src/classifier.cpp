#include "lgsp/classifier.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "lgsp/error.hpp"

namespace lgsp::classifier {

bool PrototypeBank::contains(ClassId id) const { return std::binary_search(ids_.begin(), ids_.end(), id); }

std::size_t PrototypeBank::index_of(ClassId id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) throw InvalidArgument("class " + std::to_string(id) + " has no prototype");
  return static_cast<std::size_t>(it - ids_.begin());
}

const ad::Param& PrototypeBank::prototype(ClassId id) const { return prototypes_[index_of(id)]; }
ad::Param& PrototypeBank::prototype(ClassId id) { return prototypes_[index_of(id)]; }

std::vector<ad::Param*> PrototypeBank::parameters() {
  std::vector<ad::Param*> out;
  for (ad::Param& p : prototypes_) out.push_back(&p);
  return out;
}

void PrototypeBank::set(ClassId id, std::vector<double> prototype) {
  if (l2_norm(prototype) <= kNormEpsilon) throw InvalidArgument("prototype for class " + std::to_string(id) + " has zero norm");
  if (!prototypes_.empty() && prototype.size() != prototypes_[0].value.size()) {
    throw InvalidArgument("prototype width mismatch");
  }
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  auto pos = it - ids_.begin();
  if (it != ids_.end() && *it == id) {
    prototypes_[static_cast<std::size_t>(pos)].value = Tensor::vector(std::move(prototype));
    return;
  }
  ids_.insert(it, id);
  prototypes_.insert(prototypes_.begin() + pos, ad::Param("classifier.class" + std::to_string(id),
                                                          Tensor::vector(std::move(prototype))));
}

std::vector<std::pair<ClassId, std::vector<double>>> class_means(const std::vector<LabeledFeature>& features) {
  std::map<ClassId, std::pair<std::vector<double>, std::size_t>> acc;
  for (const auto& f : features) {
    if (f.feature.empty()) throw InvalidArgument("empty feature vector");
    auto& [sum, count] = acc[f.label];
    if (sum.empty()) sum.assign(f.feature.size(), 0.0);
    if (sum.size() != f.feature.size()) throw InvalidArgument("feature width mismatch");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += f.feature[i];
    ++count;
  }
  std::vector<std::pair<ClassId, std::vector<double>>> out;
  for (auto& [id, entry] : acc) {
    auto& [sum, count] = entry;
    for (double& v : sum) v /= static_cast<double>(count);
    out.emplace_back(id, std::move(sum));
  }
  return out;
}

void PrototypeBank::fit(const std::vector<LabeledFeature>& features) {
  if (features.empty()) throw InvalidArgument("fit_prototypes: no features");
  for (auto& [id, mean] : class_means(features)) set(id, std::move(mean));
}

ad::Var PrototypeBank::stacked(ad::Tape& tape, const std::vector<ClassId>& classes) {
  std::vector<ad::Var> rows;
  rows.reserve(classes.size());
  for (ClassId id : classes) {
    ad::Param& p = prototype(id);
    rows.push_back(ad::reshape(tape.param(p), {1, p.value.size()}));
  }
  return ad::concat_rows(rows);
}

Prediction classify(std::span<const double> feature, const PrototypeBank& bank) {
  if (bank.empty()) throw InvalidArgument("classify: prototype bank is empty");
  if (l2_norm(feature) <= kNormEpsilon) throw InvalidArgument("classify: zero-norm feature");
  Prediction p;
  p.scores.reserve(bank.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    p.scores.push_back(cosine_similarity(feature, bank.prototype(bank.ids()[i]).value.data()));
    if (p.scores[i] > p.scores[best]) best = i;
  }
  p.label = bank.ids()[best];
  return p;
}

ClassId argmax_within(const Prediction& p, const PrototypeBank& bank, const std::vector<ClassId>& allowed) {
  if (allowed.empty()) throw InvalidArgument("argmax_within: empty label space");
  std::vector<ClassId> sorted = allowed;
  std::sort(sorted.begin(), sorted.end());
  ClassId best = sorted[0];
  double best_score = p.scores.at(bank.index_of(best));
  for (ClassId id : sorted) {
    double s = p.scores.at(bank.index_of(id));
    if (s > best_score) {
      best = id;
      best_score = s;
    }
  }
  return best;
}

}  // namespace lgsp::classifier
