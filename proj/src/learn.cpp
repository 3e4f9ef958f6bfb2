#include "lgsp/learn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lgsp/error.hpp"
#include "lgsp/protocol.hpp"

namespace lgsp::learn {

double cosine_lr(std::size_t step, const Schedule& schedule) {
  if (schedule.total_steps == 0) throw InvalidArgument("cosine_lr: total steps must be positive");
  if (step > schedule.total_steps) {
    throw InvalidArgument("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(schedule.total_steps) + "]");
  }
  if (step == schedule.total_steps) return 0.0;
  double t = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

ParamGroup::ParamGroup(std::string name, std::vector<ad::Param*> params, double lr, double momentum)
    : name_(std::move(name)), params_(std::move(params)), lr_(lr), momentum_(momentum) {
  if (lr < 0.0) throw InvalidArgument("group " + name_ + ": negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("group " + name_ + ": momentum must be in [0, 1)");
  for (ad::Param* p : params_) {
    if (!p) throw InvalidArgument("group " + name_ + ": null parameter");
    velocity_.emplace_back(p->value.shape());
  }
}

void ParamGroup::set_lr(double lr) {
  if (lr < 0.0) throw InvalidArgument("group " + name_ + ": negative learning rate");
  lr_ = lr;
}

void ParamGroup::set_trainable(bool trainable) {
  trainable_ = trainable;
  for (ad::Param* p : params_) p->trainable = trainable;
}

void ParamGroup::zero_grad() {
  for (ad::Param* p : params_) p->zero_grad();
}

void ParamGroup::step(double scale) {
  if (!trainable_) return;
  double rate = lr_ * scale;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Param& p = *params_[i];
    if (!p.trainable) continue;
    auto v = velocity_[i].data();
    auto g = p.grad.data();
    auto w = p.value.data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      w[j] -= rate * v[j];
    }
  }
}

ParamGroup& Optimizer::add(ParamGroup group) {
  if (has(group.name())) throw InvalidArgument("duplicate parameter group " + group.name());
  groups_.push_back(std::move(group));
  return groups_.back();
}

ParamGroup& Optimizer::group(const std::string& name) {
  for (auto& g : groups_) {
    if (g.name() == name) return g;
  }
  throw InvalidArgument("no parameter group " + name);
}

bool Optimizer::has(const std::string& name) const {
  return std::any_of(groups_.begin(), groups_.end(), [&](const ParamGroup& g) { return g.name() == name; });
}

void Optimizer::zero_grad() {
  for (auto& g : groups_) g.zero_grad();
}

void Optimizer::step(double scale) {
  for (auto& g : groups_) g.step(scale);
}

bool GradCheckReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.pass; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

void GradCheckReport::merge(const GradCheckReport& other) {
  entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

std::string GradCheckReport::to_csv() const {
  std::ostringstream os;
  os << "param,checked,max_rel_error,max_abs_error,tolerance,pass\n";
  for (const auto& e : entries) {
    os << e.name << ',' << e.checked << ',' << protocol::format_double(e.max_rel_error) << ','
       << protocol::format_double(e.max_abs_error) << ',' << protocol::format_double(e.tolerance) << ','
       << (e.pass ? "true" : "false") << '\n';
  }
  return os.str();
}

namespace {

double evaluate(const LossFn& loss) {
  ad::Tape tape;
  ad::Var l = loss(tape);
  if (l.size() != 1) throw InvalidArgument("grad_check: loss must be a scalar");
  return l.value()[0];
}

}  // namespace

GradCheckReport grad_check(const std::vector<ad::Param*>& params, const LossFn& loss, const GradCheckOptions& options) {
  if (options.h <= 0.0) throw InvalidArgument("grad_check: step h must be positive");
  std::vector<ad::Param*> active;
  std::size_t total = 0;
  for (ad::Param* p : params) {
    if (p && p->trainable) {
      active.push_back(p);
      total += p->value.size();
    }
  }
  for (ad::Param* p : active) p->zero_grad();
  {
    ad::Tape tape;
    ad::Var l = loss(tape);
    tape.backward(l);
  }
  std::size_t stride = total > options.max_entries ? (total + options.max_entries - 1) / options.max_entries : 1;

  GradCheckReport report;
  for (ad::Param* p : active) {
    GradCheckEntry e;
    e.name = p->name;
    e.tolerance = options.tolerance;
    auto w = p->value.data();
    Tensor analytic = p->grad;
    for (std::size_t j = 0; j < w.size(); j += stride) {
      double saved = w[j];
      w[j] = saved + options.h;
      double up = evaluate(loss);
      w[j] = saved - options.h;
      double down = evaluate(loss);
      w[j] = saved;
      double numeric = (up - down) / (2.0 * options.h);
      double a = analytic[j];
      double abs_err = std::abs(a - numeric);
      double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      e.max_rel_error = std::max(e.max_rel_error, rel);
      ++e.checked;
    }
    e.pass = e.max_rel_error <= options.tolerance;
    report.entries.push_back(e);
  }
  for (ad::Param* p : active) p->zero_grad();
  return report;
}

}  // namespace lgsp::learn
