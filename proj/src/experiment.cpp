#include "lgsp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lgsp/error.hpp"
#include "lgsp/io.hpp"
#include "lgsp/parallel.hpp"

namespace lgsp::experiment {

namespace {

std::string strip_header(const std::string& text) {
  auto nl = text.find('\n');
  return nl == std::string::npos ? std::string() : text.substr(nl + 1);
}

const char* kTrainLogHeader = "session,epoch,loss,alpha_l,alpha_g\n";
const char* kPerClassHeader = "session,class,is_base,count,correct,acc\n";

std::size_t index_in(const std::vector<classifier::ClassId>& space, classifier::ClassId id) {
  auto it = std::find(space.begin(), space.end(), id);
  if (it == space.end()) throw InvariantViolation("label " + std::to_string(id) + " outside the current label space");
  return static_cast<std::size_t>(it - space.begin());
}

}  // namespace

Dataset Dataset::load(const fs::path& dir) {
  Dataset d;
  d.dir = dir;
  if (!fs::exists(dir / "manifest.csv")) throw IoError("no manifest.csv in " + dir.string() + " (run datagen first)");
  d.rows = io::parse_manifest(io::read_text(dir / "manifest.csv"));
  for (const auto& r : d.rows) d.images.push_back(io::read_tensor(dir / r.file));
  return d;
}

Trainer::Trainer(const config::ExperimentConfig& cfg, const Dataset& data)
    : cfg_(cfg), data_(&data), model_(cfg), sessions_(protocol::build_sessions(config::fscil_spec(cfg), data.rows)) {
  for (const auto& img : data.images) {
    if (img.shape() != Shape{1, cfg.data.channels, cfg.data.height, cfg.data.width}) {
      throw InvalidArgument("dataset image shape does not match data.channels/height/width");
    }
  }
}

void Trainer::warm_queries(const std::vector<std::size_t>& rows) const {
  std::vector<std::size_t> missing;
  for (std::size_t r : rows) {
    if (!queries_.count(r)) missing.push_back(r);
  }
  std::vector<std::vector<double>> out(missing.size());
  parallel_for(missing.size(), cfg_.threads, [&](std::size_t i) { out[i] = model_.query(data_->images[missing[i]]); });
  for (std::size_t i = 0; i < missing.size(); ++i) queries_[missing[i]] = std::move(out[i]);
}

const std::vector<double>& Trainer::query(std::size_t row) const {
  auto it = queries_.find(row);
  if (it == queries_.end()) throw InvariantViolation("query cache miss for row " + std::to_string(row));
  return it->second;
}

const Tensor& Trainer::fetch_training(const protocol::TrainingGuard& guard, std::size_t row) {
  guard.check(row);
  ++guard_checks_;
  return data_->images[row];
}

std::vector<ad::Param*> Trainer::prototypes_of(const std::vector<classifier::ClassId>& classes) {
  std::vector<ad::Param*> out;
  for (auto id : classes) out.push_back(&model_.bank.prototype(id));
  return out;
}

void Trainer::pretext() {
  if (pretext_done_) throw InvariantViolation("pretext fit already ran");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data_->rows.size(); ++i) {
    if (data_->rows[i].split == protocol::Split::Pretext) rows.push_back(i);
  }
  auto& vit = model_.vit;
  if (cfg_.backbone.pretext_epochs > 0 && !rows.empty()) {
    classifier::PrototypeBank head;
    std::vector<classifier::LabeledFeature> feats;
    for (std::size_t r : rows) {
      Tensor t = backbone::forward(vit, data_->images[r]);
      feats.push_back({{t.data().begin(), t.data().begin() + static_cast<long>(t.dim(1))}, data_->rows[r].label});
    }
    head.fit(feats);
    vit.set_frozen(false);
    learn::Optimizer opt;
    opt.add(learn::ParamGroup("backbone", vit.parameters(), cfg_.backbone.pretext_lr, cfg_.train.momentum));
    opt.add(learn::ParamGroup("head", head.parameters(), cfg_.backbone.pretext_lr, cfg_.train.momentum));
    const std::size_t B = cfg_.train.batch_size;
    const std::size_t per_epoch = (rows.size() + B - 1) / B;
    const std::size_t total = per_epoch * cfg_.backbone.pretext_epochs;
    Rng rng(mix_seed(cfg_.seed, 0x9E7E));
    std::size_t step = 0;
    for (std::size_t e = 0; e < cfg_.backbone.pretext_epochs; ++e) {
      auto order = rows;
      Rng er = rng.fork(e);
      er.shuffle(order);
      for (std::size_t b = 0; b < per_epoch; ++b) {
        opt.zero_grad();
        std::size_t end = std::min(order.size(), (b + 1) * B);
        double inv = 1.0 / static_cast<double>(end - b * B);
        for (std::size_t i = b * B; i < end; ++i) {
          ad::Tape tape;
          ad::Var tokens = backbone::forward(tape, vit, tape.constant(data_->images[order[i]]), nullptr);
          ad::Var logits = ad::scale(ad::cosine_rows(ad::slice_rows(tokens, 0, 1), head.stacked(tape, head.ids())),
                                     cfg_.train.logit_scale);
          ad::Var l = ad::cross_entropy(logits, head.index_of(data_->rows[order[i]].label));
          tape.backward(ad::scale(l, inv));
        }
        opt.step(learn::cosine_lr(step++, {1.0, total}));
      }
    }
  }
  vit.set_frozen(true);
  queries_.clear();
  pretext_done_ = true;
}

void Trainer::train_epochs(learn::Optimizer& opt, const protocol::TrainingGuard& guard,
                           const std::vector<std::size_t>& rows, const std::vector<classifier::ClassId>& label_space,
                           std::size_t epochs, Rng& rng, std::size_t session) {
  const std::size_t B = cfg_.train.batch_size;
  const std::size_t per_epoch = (rows.size() + B - 1) / B;
  const std::size_t total = per_epoch * epochs;
  std::size_t step = 0;
  std::ostringstream log;
  for (std::size_t e = 0; e < epochs; ++e) {
    auto order = rows;
    Rng er = rng.fork(e);
    er.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      opt.zero_grad();
      std::size_t end = std::min(order.size(), (b + 1) * B);
      double inv = 1.0 / static_cast<double>(end - b * B);
      for (std::size_t i = b * B; i < end; ++i) {
        std::size_t row = order[i];
        const Tensor& x = fetch_training(guard, row);
        Rng dropout = rng.fork(mix_seed(e + 1, row));
        ad::Tape tape;
        auto rec = model_.forward(tape, x, query(row), true, dropout);
        ad::Var logits = ad::scale(ad::cosine_rows(rec.feature, model_.bank.stacked(tape, label_space)),
                                   cfg_.train.logit_scale);
        ad::Var l = ad::cross_entropy(logits, index_in(label_space, data_->rows[row].label));
        if (rec.aux_loss.valid()) l = ad::add(l, rec.aux_loss);
        loss_sum += l.value()[0];
        tape.backward(ad::scale(l, inv));
      }
      opt.step(learn::cosine_lr(step++, {1.0, total}));
    }
    log << session << ',' << e << ',' << protocol::format_double(loss_sum / static_cast<double>(rows.size())) << ','
        << protocol::format_double(model_.fusion.alpha_l()) << ',' << protocol::format_double(model_.fusion.alpha_g())
        << '\n';
  }
  train_log_ += log.str();
}

protocol::MetricsRow Trainer::run_session() {
  if (!pretext_done_) pretext();
  if (finished()) throw InvariantViolation("all sessions already ran");
  const std::size_t t = state_.completed();
  const protocol::SessionData& s = sessions_[t];
  state_.begin(s);
  protocol::TrainingGuard guard(s);
  if (cfg_.train.backbone_trainable) queries_.clear();

  std::vector<const Tensor*> images;
  for (std::size_t r : s.train) images.push_back(&fetch_training(guard, r));
  warm_queries(s.train);
  std::vector<classifier::LabeledFeature> feats(s.train.size());
  parallel_for(s.train.size(), cfg_.threads, [&](std::size_t i) {
    feats[i] = {model_.feature(*images[i], query(s.train[i])), data_->rows[s.train[i]].label};
  });
  model_.bank.fit(feats);

  model_.freeze_all();
  learn::Optimizer opt;
  std::vector<std::string> scopes = cfg_.train.novel_scope;
  if (t == 0) {
    scopes = {"classifier", "vpt", "tokpool", "lsp", "gsp", "fusion"};
    if (cfg_.train.backbone_trainable) scopes.push_back("backbone");
  }
  const auto& tr = cfg_.train;
  for (const auto& name : scopes) {
    double lr = t == 0 ? tr.base_lr : tr.novel_lr;
    if (name.rfind("lsp", 0) == 0) lr = tr.lsp_lr;
    if (name == "gsp") lr = t == 0 ? tr.gsp_base_lr : tr.gsp_novel_lr;
    if (name == "fusion") lr = tr.fusion_lr;
    auto params = name == "classifier" ? prototypes_of(s.classes) : model_.scope(name);
    if (params.empty()) continue;
    for (auto* p : params) p->trainable = true;
    opt.add(learn::ParamGroup(name, params, lr, tr.momentum));
  }
  Rng rng(mix_seed(cfg_.seed, 0x5E0000 + t));
  train_epochs(opt, guard, s.train, state_.seen(), t == 0 ? tr.base_epochs : tr.novel_epochs, rng, t);
  model_.freeze_all();

  // Prototypes of this session's classes become the class means under the trained model.
  parallel_for(s.train.size(), cfg_.threads, [&](std::size_t i) {
    feats[i] = {model_.feature(*images[i], query(s.train[i])), data_->rows[s.train[i]].label};
  });
  model_.bank.fit(feats);

  Evaluation ev = evaluate();
  protocol::MetricsRow row;
  row.session = t;
  row.acc = ev.breakdown.overall;
  row.base_acc = ev.breakdown.b2bn;
  row.novel_acc = ev.breakdown.n2bn;
  row.b2bn = ev.breakdown.b2bn;
  row.n2bn = ev.breakdown.n2bn;
  row.b2b = ev.breakdown.b2b;
  row.n2n = ev.breakdown.n2n;
  row.alpha_l = model_.fusion.alpha_l();
  row.alpha_g = model_.fusion.alpha_g();
  row.seed = cfg_.seed;
  row.tag = config::effective_tag(cfg_);

  std::map<classifier::ClassId, std::pair<std::size_t, std::size_t>> per;
  for (std::size_t i = 0; i < ev.truth.size(); ++i) {
    auto& [count, correct] = per[ev.truth[i]];
    ++count;
    correct += ev.predictions[i].label == ev.truth[i];
  }
  std::ostringstream pc;
  for (const auto& [id, cc] : per) {
    pc << t << ',' << id << ',' << (state_.is_base(id) ? 1 : 0) << ',' << cc.first << ',' << cc.second << ','
       << protocol::format_double(static_cast<double>(cc.second) / static_cast<double>(cc.first)) << '\n';
  }
  per_class_ += pc.str();

  std::ostringstream sc;
  sc << "row,label,pred";
  for (auto id : model_.bank.ids()) sc << ",c" << id;
  sc << '\n';
  for (std::size_t i = 0; i < ev.rows.size(); ++i) {
    sc << ev.rows[i] << ',' << ev.truth[i] << ',' << ev.predictions[i].label;
    for (double v : ev.predictions[i].scores) sc << ',' << protocol::format_double(v);
    sc << '\n';
  }
  scores_[t] = sc.str();

  state_.finish();
  metrics_.append(row);
  return row;
}

Trainer::Evaluation Trainer::evaluate() const {
  Evaluation ev;
  ev.rows = state_.cumulative_test();
  std::sort(ev.rows.begin(), ev.rows.end());
  warm_queries(ev.rows);
  ev.predictions.resize(ev.rows.size());
  parallel_for(ev.rows.size(), cfg_.threads, [&](std::size_t i) {
    std::size_t r = ev.rows[i];
    auto p = classifier::classify(model_.feature(data_->images[r], query(r)), model_.bank);
    ev.predictions[i] = hook_ ? hook_(r, p) : p;
  });
  for (std::size_t r : ev.rows) ev.truth.push_back(data_->rows[r].label);
  ev.breakdown = protocol::breakdown(ev.predictions, ev.truth, model_.bank, state_);
  return ev;
}

void Trainer::save(const fs::path& run_dir) const {
  auto& m = const_cast<model::Model&>(model_);
  fs::path dir = run_dir / "model";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const ad::Param* p : m.parameters()) io::write_tensor(dir / (p->name + ".lgsp"), p->value);
  std::string ids;
  for (auto id : model_.bank.ids()) {
    io::write_tensor(dir / (model_.bank.prototype(id).name + ".lgsp"), model_.bank.prototype(id).value);
    ids += (ids.empty() ? "" : ",") + std::to_string(id);
  }
  io::write_text(run_dir / "state.txt", "completed=" + std::to_string(state_.completed()) + "\nclasses=" + ids + "\n");
}

Trainer Trainer::restore(const config::ExperimentConfig& cfg, const Dataset& data, const fs::path& run_dir) {
  Trainer tr(cfg, data);
  fs::path dir = run_dir / "model";
  if (!fs::exists(run_dir / "state.txt") || !fs::is_directory(dir)) {
    throw IoError("missing model: " + run_dir.string() + " has no saved checkpoint");
  }
  std::size_t completed = 0;
  std::vector<classifier::ClassId> ids;
  std::istringstream st(io::read_text(run_dir / "state.txt"));
  std::string line;
  while (std::getline(st, line)) {
    if (line.rfind("completed=", 0) == 0) completed = std::stoul(line.substr(10));
    if (line.rfind("classes=", 0) == 0) {
      std::istringstream ls(line.substr(8));
      std::string item;
      while (std::getline(ls, item, ',')) {
        if (!item.empty()) ids.push_back(std::stoi(item));
      }
    }
  }
  for (ad::Param* p : tr.model_.parameters()) {
    Tensor v = io::read_tensor(dir / (p->name + ".lgsp"));
    if (v.shape() != p->value.shape()) throw IoError("checkpoint shape mismatch for " + p->name);
    p->value = std::move(v);
  }
  for (auto id : ids) {
    Tensor v = io::read_tensor(dir / ("classifier.class" + std::to_string(id) + ".lgsp"));
    tr.model_.bank.set(id, {v.data().begin(), v.data().end()});
  }
  tr.model_.freeze_all();
  tr.pretext_done_ = true;
  tr.state_ = protocol::SessionState::replay(tr.sessions_, completed);
  if (fs::exists(run_dir / "metrics.csv")) tr.metrics_ = protocol::MetricsRecord::from_csv(io::read_text(run_dir / "metrics.csv"));
  if (fs::exists(run_dir / "train_log.csv")) tr.train_log_ = strip_header(io::read_text(run_dir / "train_log.csv"));
  if (fs::exists(run_dir / "per_class.csv")) tr.per_class_ = strip_header(io::read_text(run_dir / "per_class.csv"));
  for (std::size_t t = 0; t < completed; ++t) {
    fs::path f = run_dir / "scores" / ("session" + std::to_string(t) + ".csv");
    if (fs::exists(f)) tr.scores_[t] = io::read_text(f);
  }
  return tr;
}

void write_run(const Trainer& trainer, const fs::path& out) {
  fs::create_directories(out);
  io::write_text(out / "config.resolved", config::resolved(trainer.config()));
  io::write_text(out / "metrics.csv", trainer.metrics().to_csv());
  io::write_text(out / "train_log.csv", kTrainLogHeader + trainer.train_log());
  io::write_text(out / "per_class.csv", kPerClassHeader + trainer.per_class());
  std::ostringstream ss;
  ss << "session,class,train_rows,test_rows\n";
  for (const auto& s : trainer.sessions()) {
    for (auto id : s.classes) {
      ss << s.index << ',' << id << ',' << s.train.size() / s.classes.size() << ','
         << s.test.size() / s.classes.size() << '\n';
    }
  }
  io::write_text(out / "sessions.csv", ss.str());
  for (const auto& [t, text] : trainer.score_dumps()) {
    io::write_text(out / "scores" / ("session" + std::to_string(t) + ".csv"), text);
  }
  trainer.save(out);
}

config::ExperimentConfig load_run_config(const fs::path& run_dir, std::size_t threads) {
  if (!fs::exists(run_dir / "config.resolved")) throw IoError("missing model: no config.resolved in " + run_dir.string());
  auto cfg = config::parse(io::read_text(run_dir / "config.resolved"));
  if (threads > 0) cfg.threads = threads;
  config::validate(cfg);
  return cfg;
}

namespace {

protocol::MetricsRecord run_with(const config::ExperimentConfig& cfg, const Dataset& data, const fs::path& out) {
  Trainer tr(cfg, data);
  tr.pretext();
  while (!tr.finished()) tr.run_session();
  write_run(tr, out);
  return tr.metrics();
}

}  // namespace

protocol::MetricsRecord run(const config::ExperimentConfig& cfg, const fs::path& out) {
  config::validate(cfg);
  Dataset data = Dataset::load(cfg.data.dir);
  return run_with(cfg, data, out);
}

protocol::MetricsRow train_base(const config::ExperimentConfig& cfg, const fs::path& out) {
  config::validate(cfg);
  Dataset data = Dataset::load(cfg.data.dir);
  Trainer tr(cfg, data);
  tr.pretext();
  auto row = tr.run_session();
  write_run(tr, out);
  return row;
}

protocol::MetricsRow train_novel(const fs::path& run_dir, std::size_t threads) {
  auto cfg = load_run_config(run_dir, threads);
  Dataset data = Dataset::load(cfg.data.dir);
  Trainer tr = Trainer::restore(cfg, data, run_dir);
  if (tr.state().completed() == 0) throw InvariantViolation("train-novel needs a run with a finished base session");
  auto row = tr.run_session();
  write_run(tr, run_dir);
  return row;
}

protocol::MetricsRow eval(const fs::path& run_dir, std::size_t threads) {
  auto cfg = load_run_config(run_dir, threads);
  Dataset data = Dataset::load(cfg.data.dir);
  Trainer tr = Trainer::restore(cfg, data, run_dir);
  if (tr.state().completed() == 0) throw InvariantViolation("eval needs at least one finished session");
  auto ev = tr.evaluate();
  protocol::MetricsRow row;
  row.session = tr.state().completed() - 1;
  row.acc = ev.breakdown.overall;
  row.base_acc = ev.breakdown.b2bn;
  row.novel_acc = ev.breakdown.n2bn;
  row.b2bn = ev.breakdown.b2bn;
  row.n2bn = ev.breakdown.n2bn;
  row.b2b = ev.breakdown.b2b;
  row.n2n = ev.breakdown.n2n;
  row.alpha_l = tr.model().fusion.alpha_l();
  row.alpha_g = tr.model().fusion.alpha_g();
  row.seed = cfg.seed;
  row.tag = config::effective_tag(cfg);
  protocol::MetricsRecord rec;
  rec.append(row);
  io::write_text(run_dir / "eval.csv", rec.to_csv());
  return row;
}

std::vector<SweepPoint> sweep_pool(const config::ExperimentConfig& cfg, const fs::path& out) {
  config::validate(cfg);
  if (cfg.sweep_pool_sizes.empty()) throw ConfigError("sweep.pool_sizes: empty sweep");
  Dataset data = Dataset::load(cfg.data.dir);
  std::vector<SweepPoint> points;
  for (std::size_t size : cfg.sweep_pool_sizes) {
    config::ExperimentConfig c = cfg;
    if (c.tokpool.mode == backbone::InsertMode::None) c.tokpool.mode = backbone::InsertMode::Deep;
    c.tokpool.size = size;
    c.tokpool.select = size;
    if (c.tag.empty()) c.tag = "pool" + std::to_string(size);
    config::validate(c);
    auto rec = run_with(c, data, out / ("pool" + std::to_string(size)));
    SweepPoint p;
    p.pool_size = size;
    p.base_session_acc = rec.rows().front().acc;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rec.rows()) {
      if (r.session > 0 && r.novel_acc) {
        sum += *r.novel_acc;
        ++n;
      }
    }
    p.novel_session_acc = n ? sum / static_cast<double>(n) : 0.0;
    p.avg = rec.average();
    points.push_back(p);
  }
  io::write_text(out / "sweep.csv", sweep_csv(points));
  return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "pool_size,base_session_acc,novel_session_acc,avg\n";
  for (const auto& p : points) {
    out += std::to_string(p.pool_size) + "," + protocol::format_double(p.base_session_acc) + "," +
           protocol::format_double(p.novel_session_acc) + "," + protocol::format_double(p.avg) + "\n";
  }
  return out;
}

namespace {

config::ExperimentConfig toy_config(const config::ExperimentConfig& base, bool variant) {
  config::ExperimentConfig c = base;
  c.data.channels = 2;
  c.data.height = c.data.width = 8;
  c.data.motif_size = 4;
  c.backbone.patch = 4;
  c.backbone.d_model = 8;
  c.backbone.layers = 2;
  c.backbone.heads = 2;
  c.backbone.mlp_hidden = 8;
  c.vpt.mode = variant ? backbone::InsertMode::Shallow : backbone::InsertMode::Deep;
  c.vpt.length = 2;
  c.tokpool.mode = variant ? backbone::InsertMode::Shallow : backbone::InsertMode::Deep;
  c.tokpool.size = 3;
  c.tokpool.select = 2;
  c.tokpool.length = 1;
  c.tokpool.key_weight = 0.1;
  c.lsp.enabled = true;
  c.lsp.pool_size = 4;
  c.lsp.n_select = 2;
  c.lsp.hidden = 2;
  c.lsp.kernels = {1, 3};
  c.lsp.tau = 0.7;
  c.lsp.tau_learnable = true;
  c.lsp.selection_mode = variant ? lsp::SelectionMode::Soft : lsp::SelectionMode::Hard;
  c.gsp.enabled = true;
  c.gsp.rings = 4;
  c.gsp.tau = 0.8;
  c.gsp.tau_learnable = true;
  c.gsp.formula_mode = variant ? gsp::FormulaMode::Verbatim : gsp::FormulaMode::Annulus;
  c.fusion.constraint_mode = variant ? fusion::ConstraintMode::FixedSum : fusion::ConstraintMode::Independent;
  c.fusion.alpha_l = 0.6;
  c.fusion.alpha_g = 0.4;
  return c;
}

learn::GradCheckReport model_check(const config::ExperimentConfig& c, const std::string& prefix) {
  model::Model m(c);
  Rng rng(mix_seed(c.seed, 0x6C4EC4));
  std::vector<Tensor> xs;
  std::vector<std::vector<double>> qs;
  for (int i = 0; i < 2; ++i) {
    xs.push_back(randn({1, c.data.channels, c.data.height, c.data.width}, rng));
    qs.push_back(m.query(xs.back()));
  }
  m.bank.set(0, randn({c.backbone.d_model}, rng).values());
  m.bank.set(1, randn({c.backbone.d_model}, rng).values());
  std::vector<classifier::ClassId> space = {0, 1};

  std::vector<ad::Param*> params = m.parameters();
  for (auto* p : m.bank.parameters()) params.push_back(p);
  for (auto* p : params) p->trainable = true;
  if (c.fusion.constraint_mode == fusion::ConstraintMode::FixedSum) m.fusion.alpha_g_param().trainable = false;

  learn::LossFn loss = [&](ad::Tape& tape) {
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Rng dropout(mix_seed(c.seed, 0xD00 + i));
      auto rec = m.forward(tape, xs[i], qs[i], true, dropout);
      ad::Var logits = ad::scale(ad::cosine_rows(rec.feature, m.bank.stacked(tape, space)), c.train.logit_scale);
      ad::Var l = ad::cross_entropy(logits, i);
      if (rec.aux_loss.valid()) l = ad::add(l, rec.aux_loss);
      terms.push_back(l);
    }
    return ad::sum(ad::stack(terms));
  };
  learn::GradCheckOptions opt;
  opt.h = 1e-5;
  opt.tolerance = 1e-4;
  auto report = learn::grad_check(params, loss, opt);
  for (auto& e : report.entries) e.name = prefix + e.name;
  return report;
}

learn::GradCheckReport linear_checks(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x11AEA));
  learn::GradCheckOptions opt;
  opt.h = 1e-3;
  opt.tolerance = 1e-6;
  learn::GradCheckReport report;

  ad::Param w("linear.weight", randn({5, 3}, rng));
  ad::Param b("linear.bias", randn({3}, rng));
  Tensor x = randn({4, 5}, rng), c1 = randn({4, 3}, rng);
  report.merge(learn::grad_check({&w, &b}, [&](ad::Tape& t) {
    ad::Var y = ad::add_row(ad::matmul(t.constant(x), t.param(w)), t.param(b));
    return ad::sum(ad::mul(y, t.constant(c1)));
  }, opt));

  ad::Param img("linear.dft_input", randn({1, 2, 8, 8}, rng));
  Tensor mask = randn({8, 8}, rng), c2 = randn({1, 2, 8, 8}, rng);
  report.merge(learn::grad_check({&img}, [&](ad::Tape& t) {
    return ad::sum(ad::mul(ad::spectral_filter(t.param(img), t.constant(mask)), t.constant(c2)));
  }, opt));

  fusion::FusionParams f(fusion::ConstraintMode::Independent, 0.3, 0.7);
  f.alpha_l_param().name = "linear.fusion.alpha_l";
  f.alpha_g_param().name = "linear.fusion.alpha_g";
  Tensor fx = randn({1, 2, 4, 4}, rng), fp = randn({1, 2, 4, 4}, rng), fg = randn({1, 2, 4, 4}, rng),
         c3 = randn({1, 2, 4, 4}, rng);
  report.merge(learn::grad_check({&f.alpha_l_param(), &f.alpha_g_param()}, [&](ad::Tape& t) {
    ad::Var y = fusion::fuse(t, t.constant(fx), t.constant(fp), t.constant(fg), f);
    return ad::sum(ad::mul(y, t.constant(c3)));
  }, opt));
  return report;
}

}  // namespace

learn::GradCheckReport grad_check(const config::ExperimentConfig& cfg) {
  learn::GradCheckReport report = model_check(toy_config(cfg, false), "hard/");
  report.merge(model_check(toy_config(cfg, true), "soft/"));
  report.merge(linear_checks(cfg.seed));
  return report;
}

std::vector<fs::path> export_heatmaps(const fs::path& run_dir, const std::string& what, const fs::path& out_dir,
                                      std::size_t threads) {
  static const std::vector<std::string> kinds = {"cls", "prompts", "masks", "local_prompts"};
  if (std::find(kinds.begin(), kinds.end(), what) == kinds.end()) {
    throw InvalidArgument("unknown export '" + what + "' (cls|prompts|masks|local_prompts)");
  }
  auto cfg = load_run_config(run_dir, threads);
  Dataset data = Dataset::load(cfg.data.dir);
  Trainer tr = Trainer::restore(cfg, data, run_dir);
  const auto& m = tr.model();
  fs::path out = (out_dir.empty() ? run_dir / "exports" : out_dir) / what;
  std::vector<fs::path> stems;

  if (what == "masks") {
    if (!m.rings) throw InvalidArgument("export masks: the run has no global prompt (gsp.enabled=false)");
    auto shape = [&](Tensor t) { return t.reshaped({m.rings->height(), m.rings->width()}); };
    for (std::size_t k = 1; k <= m.rings->rings(); ++k) stems.push_back(out / ("ring" + std::to_string(k)));
    stems.push_back(out / "combined");
    for (std::size_t k = 1; k <= m.rings->rings(); ++k) io::write_heatmap(stems[k - 1], shape(m.rings->ring_mask(k)));
    io::write_heatmap(stems.back(), shape(m.rings->combined_mask()));
    return stems;
  }

  std::vector<std::size_t> rows = tr.state().cumulative_test();
  std::sort(rows.begin(), rows.end());
  rows.resize(std::min(rows.size(), cfg.export_samples));
  if (rows.empty()) throw InvalidArgument("export: no test samples (export.samples=0 or no finished session)");

  if (what == "local_prompts") {
    if (!m.pool) throw InvalidArgument("export local_prompts: the run has no local prompt pool (lsp.enabled=false)");
    const Tensor& x = data.images[rows[0]];
    Rng unused(0);
    const std::size_t C = cfg.data.channels, H = cfg.data.height, W = cfg.data.width;
    for (std::size_t i = 0; i < m.pool->size(); ++i) {
      Tensor p = lsp::generate_prompt(m.pool->entries()[i], x, false, unused);
      Tensor img({H, W});
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < H * W; ++j) img[j] += p[c * H * W + j] / static_cast<double>(C);
      }
      stems.push_back(out / ("entry" + std::to_string(i)));
      io::write_heatmap(stems.back(), img);
    }
    // Which entries each exported sample picks, and with what weight.
    std::ostringstream sel;
    sel << "sample,row,entry,similarity,selected,weight\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Tensor& xi = data.images[rows[i]];
      auto qr = m.query(xi);
      Tensor q = lsp::query_key(Tensor({1, qr.size()}, {qr.begin(), qr.end()}), m.pool->projection().value);
      auto sims = lsp::similarities(q.data(), *m.pool);
      auto lp = lsp::local_prompt(q.data(), *m.pool, xi, false, unused);
      for (std::size_t e = 0; e < sims.size(); ++e) {
        auto it = std::find(lp.selected.begin(), lp.selected.end(), e);
        bool picked = it != lp.selected.end();
        double w = picked ? lp.weights[static_cast<std::size_t>(it - lp.selected.begin())] : 0.0;
        sel << i << ',' << rows[i] << ',' << e << ',' << protocol::format_double(sims[e]) << ',' << (picked ? 1 : 0)
            << ',' << protocol::format_double(w) << '\n';
      }
    }
    io::write_text(out / "selection.csv", sel.str());
    return stems;
  }

  std::size_t token = 0;
  if (what == "prompts") {
    if (m.prompts.prompt_tokens() == 0) throw InvalidArgument("export prompts: the run has no prompt tokens");
    token = 1;
  }
  const std::size_t layer = cfg.backbone.layers - 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& x = data.images[rows[i]];
    auto q = m.query(x);
    Tensor map = backbone::attention_map(m.vit, m.fused_input(x, q), &m.prompts, layer, token, q);
    stems.push_back(out / ("sample" + std::to_string(i)));
    io::write_heatmap(stems.back(), map);
  }
  return stems;
}

}  // namespace lgsp::experiment
