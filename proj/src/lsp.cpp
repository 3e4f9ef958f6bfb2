#include "lgsp/lsp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lgsp/error.hpp"

namespace lgsp::lsp {

namespace {

Tensor kaiming(Shape shape, std::size_t fan_in, Rng& rng) {
  return randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Tensor dropout_mask(std::size_t n, double rate, Rng& rng) {
  Tensor mask({n});
  double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

void check_input(const PromptPoolEntry& entry, const Shape& x) {
  if (x.size() != 4) throw InvalidArgument("prompt generator expects a B x C x H x W input");
  if (x[1] != entry.in_channels()) {
    throw InvalidArgument("prompt generator expects " + std::to_string(entry.in_channels()) + " channels, got " +
                          std::to_string(x[1]));
  }
  if (entry.kernel1() % 2 == 0 || entry.kernel2() % 2 == 0) throw InvalidArgument("prompt kernels must have odd size");
}

bool degenerate(std::span<const double> q) { return l2_norm(q) <= kNormEpsilon; }

}  // namespace

PromptPoolEntry make_entry(std::size_t index, const PoolOptions& o, std::size_t k1, std::size_t k2, Rng& rng) {
  if (k1 % 2 == 0 || k2 % 2 == 0) throw InvalidArgument("prompt kernels must have odd size");
  if (o.dropout < 0.0 || o.dropout >= 1.0) throw InvalidArgument("dropout rate must be in [0, 1)");
  std::string p = "lsp.entry" + std::to_string(index) + ".";
  PromptPoolEntry e;
  e.conv1_weight = ad::Param(p + "conv1.weight", kaiming({o.hidden_channels, o.in_channels, k1, k1},
                                                        o.in_channels * k1 * k1, rng));
  e.conv1_bias = ad::Param(p + "conv1.bias", Tensor({o.hidden_channels}));
  e.conv2_weight = ad::Param(p + "conv2.weight", kaiming({o.in_channels, o.hidden_channels, k2, k2},
                                                        o.hidden_channels * k2 * k2, rng));
  e.conv2_bias = ad::Param(p + "conv2.bias", Tensor({o.in_channels}));
  Tensor key = randn({o.d_key}, rng);
  double n = l2_norm(key.data());
  e.key = ad::Param(p + "key", scaled(key, 1.0 / n));
  e.dropout_rate = o.dropout;
  return e;
}

PromptPool::PromptPool(const PoolOptions& o, Rng& rng) {
  if (o.pool_size == 0) throw InvalidArgument("prompt pool must hold at least one entry");
  if (o.kernels.empty()) throw InvalidArgument("prompt pool needs at least one kernel size");
  entries_.reserve(o.pool_size);
  for (std::size_t i = 0; i < o.pool_size; ++i) {
    std::size_t k1 = o.kernels[i % o.kernels.size()];
    std::size_t k2 = o.kernels[(i + 1) % o.kernels.size()];
    entries_.push_back(make_entry(i, o, k1, k2, rng));
  }
  Tensor g({o.d_model, o.d_key});
  for (std::size_t i = 0; i < std::min(o.d_model, o.d_key); ++i) g[i * o.d_key + i] = 1.0;
  projection_ = ad::Param("lsp.projection", std::move(g));
  temperature_ = ad::Param("lsp.temperature", Tensor::scalar(1.0));
  temperature_.trainable = o.learnable_temperature;
  mode_ = o.mode;
  set_n_select(o.n_select);
  set_temperature(o.temperature);
}

void PromptPool::set_n_select(std::size_t n) {
  if (n == 0 || n > entries_.size()) {
    throw InvalidArgument("selection size " + std::to_string(n) + " must be in [1, " + std::to_string(entries_.size()) +
                          "]");
  }
  n_select_ = n;
}

void PromptPool::set_temperature(double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("selection temperature must be > 0");
  temperature_.value[0] = tau;
}

void PromptPool::assign(std::vector<PromptPoolEntry> entries, ad::Param projection, std::size_t n_select,
                        double temperature, SelectionMode mode) {
  entries_ = std::move(entries);
  projection_ = std::move(projection);
  if (temperature_.name.empty()) temperature_ = ad::Param("lsp.temperature", Tensor::scalar(1.0));
  mode_ = mode;
  set_n_select(n_select);
  set_temperature(temperature);
}

ad::Var generate_prompt(ad::Tape& tape, PromptPoolEntry& entry, const ad::Var& x, bool training, Rng& rng) {
  check_input(entry, x.shape());
  ad::Var h = ad::conv2d(x, tape.param(entry.conv1_weight), tape.param(entry.conv1_bias));
  h = ad::relu(h);
  if (training && entry.dropout_rate > 0.0) h = ad::mask_multiply(h, dropout_mask(h.size(), entry.dropout_rate, rng));
  return ad::conv2d(h, tape.param(entry.conv2_weight), tape.param(entry.conv2_bias));
}

Tensor generate_prompt(const PromptPoolEntry& entry, const Tensor& x, bool training, Rng& rng) {
  ad::Tape tape;
  PromptPoolEntry frozen = entry;
  for (ad::Param* p : {&frozen.conv1_weight, &frozen.conv1_bias, &frozen.conv2_weight, &frozen.conv2_bias}) {
    p->trainable = false;
  }
  return generate_prompt(tape, frozen, tape.constant(x), training, rng).value();
}

Tensor query_key(const Tensor& features, const Tensor& projection) {
  std::size_t batch = 1, tokens = 0, d = 0;
  if (features.rank() == 3) {
    batch = features.dim(0);
    tokens = features.dim(1);
    d = features.dim(2);
  } else if (features.rank() == 2) {
    tokens = features.dim(0);
    d = features.dim(1);
  } else {
    throw InvalidArgument("query_key expects a token matrix");
  }
  if (tokens == 0) throw InvalidArgument("query_key: empty token axis");
  if (projection.rank() != 2 || projection.dim(0) != d) throw InvalidArgument("query_key: projection shape mismatch");
  std::size_t dk = projection.dim(1);
  Tensor q({batch, dk});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* cls = features.data().data() + b * tokens * d;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < dk; ++j) q[b * dk + j] += cls[i] * projection[i * dk + j];
    }
  }
  return q;
}

std::vector<double> similarities(std::span<const double> q, const PromptPool& pool) {
  std::vector<double> sims(pool.size(), 0.0);
  if (degenerate(q)) return sims;
  for (std::size_t i = 0; i < pool.size(); ++i) sims[i] = cosine_similarity(q, pool.entries()[i].key.value.data());
  return sims;
}

std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t n) {
  if (n == 0 || n > scores.size()) throw InvalidArgument("select_topk: selection size exceeds the pool");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(n);
  return idx;
}

std::vector<std::size_t> select_topk(std::span<const double> q, const PromptPool& pool) {
  return select_topk(similarities(q, pool), pool.n_select());
}

std::vector<double> selection_weights(std::span<const double> q, const PromptPool& pool,
                                      const std::vector<std::size_t>& selected) {
  if (selected.empty()) throw InvalidArgument("selection_weights: empty selection");
  auto sims = similarities(q, pool);
  std::vector<double> s;
  s.reserve(selected.size());
  for (std::size_t i : selected) s.push_back(sims.at(i));
  return softmax(s, pool.temperature());
}

Tensor aggregate(const std::vector<Tensor>& prompts, std::span<const double> weights) {
  if (prompts.empty() || prompts.size() != weights.size()) throw InvalidArgument("aggregate: weight count mismatch");
  Tensor out(prompts[0].shape());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (prompts[i].shape() != out.shape()) throw InvalidArgument("aggregate: prompt shape mismatch");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weights[i] * prompts[i][k];
  }
  return out;
}

Tensor soft_pool_forward(std::span<const double> q, const PromptPool& pool, const Tensor& x, bool training, Rng& rng) {
  auto w = softmax(similarities(q, pool), pool.temperature());
  std::vector<Tensor> prompts;
  prompts.reserve(pool.size());
  for (const auto& e : pool.entries()) prompts.push_back(generate_prompt(e, x, training, rng));
  return aggregate(prompts, w);
}

LocalPrompt local_prompt(std::span<const double> q, const PromptPool& pool, const Tensor& x, bool training, Rng& rng) {
  LocalPrompt out;
  if (pool.mode() == SelectionMode::Soft) {
    out.selected.resize(pool.size());
    std::iota(out.selected.begin(), out.selected.end(), 0);
    out.weights = softmax(similarities(q, pool), pool.temperature());
  } else {
    out.selected = select_topk(q, pool);
    out.weights = selection_weights(q, pool, out.selected);
  }
  std::vector<Tensor> prompts;
  prompts.reserve(out.selected.size());
  for (std::size_t i : out.selected) prompts.push_back(generate_prompt(pool.entries()[i], x, training, rng));
  out.prompt = aggregate(prompts, out.weights);
  return out;
}

RecordedLocalPrompt local_prompt(ad::Tape& tape, PromptPool& pool, const ad::Var& q, const ad::Var& x, bool training,
                                 Rng& rng) {
  RecordedLocalPrompt out;
  const auto qv = q.value().data();
  auto sims = similarities(qv, pool);
  if (pool.mode() == SelectionMode::Soft) {
    out.selected.resize(pool.size());
    std::iota(out.selected.begin(), out.selected.end(), 0);
  } else {
    out.selected = select_topk(sims, pool.n_select());
  }
  ad::Var weights;
  if (degenerate(qv)) {
    // No direction to match: uniform weights, nothing flows to keys or g.
    weights = tape.constant(Tensor::filled({out.selected.size()}, 1.0 / static_cast<double>(out.selected.size())));
  } else {
    std::vector<ad::Var> scores;
    scores.reserve(out.selected.size());
    for (std::size_t i : out.selected) scores.push_back(ad::cosine(q, tape.param(pool.entries()[i].key)));
    ad::Var recip = ad::reciprocal(tape.param(pool.temperature_param()));
    ad::Var stacked = ad::stack(scores);
    weights = ad::reshape(ad::softmax_rows(ad::reshape(ad::mul_scalar(stacked, recip), {1, out.selected.size()})),
                          {out.selected.size()});
  }
  const auto& wv = weights.value();
  out.weights.assign(wv.data().begin(), wv.data().end());
  std::vector<ad::Var> prompts;
  prompts.reserve(out.selected.size());
  for (std::size_t i : out.selected) prompts.push_back(generate_prompt(tape, pool.entries()[i], x, training, rng));
  out.prompt = ad::weighted_sum(weights, prompts);
  return out;
}

}  // namespace lgsp::lsp
