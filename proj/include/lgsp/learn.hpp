#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lgsp/autodiff.hpp"

namespace lgsp::learn {

struct Schedule {
  double base_lr = 0.0;
  std::size_t total_steps = 1;
};

// base * (1 + cos(pi * step / total)) / 2 for 0 <= step <= total.
double cosine_lr(std::size_t step, const Schedule& schedule);

// SGD with momentum over a named set of parameters sharing one learning rate.
class ParamGroup {
 public:
  ParamGroup(std::string name, std::vector<ad::Param*> params, double lr, double momentum = 0.9);

  const std::string& name() const { return name_; }
  double lr() const { return lr_; }
  void set_lr(double lr);
  bool trainable() const { return trainable_; }
  // Also flips Param::trainable so frozen parameters stop collecting gradients.
  void set_trainable(bool trainable);
  const std::vector<ad::Param*>& params() const { return params_; }

  void zero_grad();
  // v = momentum * v + g; p -= lr * scale * v. Frozen groups are left alone.
  void step(double scale = 1.0);

 private:
  std::string name_;
  std::vector<ad::Param*> params_;
  std::vector<Tensor> velocity_;
  double lr_;
  double momentum_;
  bool trainable_ = true;
};

class Optimizer {
 public:
  ParamGroup& add(ParamGroup group);
  ParamGroup& group(const std::string& name);
  bool has(const std::string& name) const;
  std::vector<ParamGroup>& groups() { return groups_; }

  void zero_grad();
  void step(double scale = 1.0);

 private:
  std::vector<ParamGroup> groups_;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error.
  double floor = 1e-6;
  // Budget over all parameters; large tensors are sampled with a fixed stride.
  std::size_t max_entries = 10000;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool pass() const;
  double max_rel_error() const;
  void merge(const GradCheckReport& other);
  std::string to_csv() const;
};

// `loss` must record a fresh, deterministic forward on the given tape and
// return a single-element Var. Only trainable parameters are checked.
using LossFn = std::function<ad::Var(ad::Tape&)>;
GradCheckReport grad_check(const std::vector<ad::Param*>& params, const LossFn& loss, const GradCheckOptions& options);

}  // namespace lgsp::learn
