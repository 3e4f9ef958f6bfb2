#include "lgsp/protocol.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

#include "lgsp/error.hpp"

namespace lgsp::protocol {

std::string to_string(Split s) {
  switch (s) {
    case Split::Pretext:
      return "pretext";
    case Split::Train:
      return "train";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "pretext") return Split::Pretext;
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw InvalidArgument("unknown split '" + s + "'");
}

void FscilSpec::validate() const {
  if (base_classes == 0) throw InvalidArgument("base session needs at least one class");
  if (base_shots == 0) throw InvalidArgument("base shots must be positive");
  if (sessions > 0 && (n_way == 0 || k_shot == 0)) throw InvalidArgument("novel sessions need n_way > 0 and k_shot > 0");
  if (test_per_class == 0) throw InvalidArgument("test_per_class must be positive");
}

std::vector<SessionData> build_sessions(const FscilSpec& spec, const std::vector<ManifestRow>& manifest) {
  spec.validate();
  std::map<ClassId, std::vector<std::size_t>> train_rows, test_rows;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& r = manifest[i];
    if (r.split == Split::Train) train_rows[r.label].push_back(i);
    if (r.split == Split::Test) test_rows[r.label].push_back(i);
  }
  std::vector<ClassId> classes;
  for (const auto& [id, rows] : train_rows) {
    if (test_rows.count(id)) classes.push_back(id);
  }
  if (classes.size() < spec.total_classes()) {
    throw InvalidArgument("dataset has " + std::to_string(classes.size()) + " usable classes, the protocol needs " +
                          std::to_string(spec.total_classes()));
  }
  Rng rng(mix_seed(spec.seed, 0x5E55));
  rng.shuffle(classes);

  auto take = [&](ClassId id, std::vector<std::size_t> rows, std::size_t n, const char* what) {
    if (rows.size() < n) {
      throw InvalidArgument("class " + std::to_string(id) + " has " + std::to_string(rows.size()) + " " + what +
                            " samples, needs " + std::to_string(n));
    }
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return manifest[a].file < manifest[b].file; });
    Rng r(mix_seed(spec.seed, 0xC1A55000ULL + static_cast<std::uint64_t>(id)));
    r.shuffle(rows);
    rows.resize(n);
    std::sort(rows.begin(), rows.end());
    return rows;
  };

  std::vector<SessionData> sessions(spec.sessions + 1);
  std::size_t next = 0;
  for (std::size_t t = 0; t <= spec.sessions; ++t) {
    SessionData& s = sessions[t];
    s.index = t;
    std::size_t count = t == 0 ? spec.base_classes : spec.n_way;
    std::size_t shots = t == 0 ? spec.base_shots : spec.k_shot;
    for (std::size_t c = 0; c < count; ++c) s.classes.push_back(classes[next++]);
    std::sort(s.classes.begin(), s.classes.end());
    for (ClassId id : s.classes) {
      auto tr = take(id, train_rows[id], shots, "train");
      auto te = take(id, test_rows[id], spec.test_per_class, "test");
      s.train.insert(s.train.end(), tr.begin(), tr.end());
      s.test.insert(s.test.end(), te.begin(), te.end());
    }
  }
  return sessions;
}

TrainingGuard::TrainingGuard(const SessionData& session)
    : session_(session.index), allowed_(session.train.begin(), session.train.end()) {}

void TrainingGuard::check(std::size_t row) const {
  if (!allowed_.count(row)) {
    throw InvariantViolation("no-leakage: sample row " + std::to_string(row) +
                             " is outside the training data of session " + std::to_string(session_));
  }
}

void SessionState::begin(const SessionData& session) {
  bool open = started_ && current_ == completed_;
  if (open) throw InvariantViolation("session " + std::to_string(current_) + " has not finished");
  if (session.index != completed_) {
    throw InvariantViolation("session " + std::to_string(session.index) + " started out of order (expected " +
                             std::to_string(completed_) + ")");
  }
  for (ClassId id : session.classes) {
    if (std::find(seen_.begin(), seen_.end(), id) != seen_.end()) {
      throw InvariantViolation("class " + std::to_string(id) + " appears in more than one session");
    }
  }
  current_ = session.index;
  started_ = true;
  seen_.insert(seen_.end(), session.classes.begin(), session.classes.end());
  std::sort(seen_.begin(), seen_.end());
  if (session.index == 0) {
    base_ = session.classes;
    std::sort(base_.begin(), base_.end());
  }
  cumulative_test_.insert(cumulative_test_.end(), session.test.begin(), session.test.end());
}

void SessionState::finish() {
  if (!started_ || current_ != completed_) throw InvariantViolation("finish() without a matching begin()");
  completed_ = current_ + 1;
}

bool SessionState::is_base(ClassId id) const { return std::binary_search(base_.begin(), base_.end(), id); }

SessionState SessionState::replay(const std::vector<SessionData>& sessions, std::size_t completed) {
  if (completed > sessions.size()) throw InvalidArgument("cannot replay more sessions than exist");
  SessionState s;
  for (std::size_t t = 0; t < completed; ++t) {
    s.begin(sessions[t]);
    s.finish();
  }
  return s;
}

Breakdown breakdown(const std::vector<classifier::Prediction>& predictions, const std::vector<ClassId>& truth,
                    const classifier::PrototypeBank& bank, const SessionState& state) {
  if (predictions.size() != truth.size()) throw InvalidArgument("breakdown: prediction/label count mismatch");
  std::vector<ClassId> novel;
  for (ClassId id : state.seen()) {
    if (!state.is_base(id)) novel.push_back(id);
  }
  std::size_t base_n = 0, novel_n = 0, b2bn = 0, n2bn = 0, b2b = 0, n2n = 0, correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    bool hit = p.label == truth[i];
    correct += hit;
    if (state.is_base(truth[i])) {
      ++base_n;
      b2bn += hit;
      b2b += classifier::argmax_within(p, bank, state.base()) == truth[i];
    } else {
      ++novel_n;
      n2bn += hit;
      n2n += classifier::argmax_within(p, bank, novel) == truth[i];
    }
  }
  Breakdown b;
  auto ratio = [](std::size_t num, std::size_t den) { return static_cast<double>(num) / static_cast<double>(den); };
  if (!predictions.empty()) b.overall = ratio(correct, predictions.size());
  if (base_n) {
    b.b2bn = ratio(b2bn, base_n);
    b.b2b = ratio(b2b, base_n);
  }
  if (novel_n) {
    b.n2bn = ratio(n2bn, novel_n);
    b.n2n = ratio(n2n, novel_n);
  }
  return b;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void MetricsRecord::append(MetricsRow row) {
  for (double a : {row.acc}) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvariantViolation("accuracy outside [0, 1]");
  }
  for (const auto& o : {row.base_acc, row.novel_acc, row.b2bn, row.n2bn, row.b2b, row.n2n}) {
    if (o && !(*o >= 0.0 && *o <= 1.0)) throw InvariantViolation("accuracy outside [0, 1]");
  }
  rows_.push_back(std::move(row));
}

double MetricsRecord::average() const {
  if (rows_.empty()) throw InvalidArgument("no sessions recorded");
  double s = 0.0;
  for (const auto& r : rows_) s += r.acc;
  return s / static_cast<double>(rows_.size());
}

std::string MetricsRecord::to_csv() const {
  std::ostringstream os;
  os << kHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : rows_) {
    os << r.session << ',' << format_double(r.acc) << ',' << opt(r.base_acc) << ',' << opt(r.novel_acc) << ','
       << opt(r.b2bn) << ',' << opt(r.n2bn) << ',' << opt(r.b2b) << ',' << opt(r.n2n) << ','
       << format_double(r.alpha_l) << ',' << format_double(r.alpha_g) << ',' << r.seed << ',' << r.tag << '\n';
  }
  return os.str();
}

MetricsRecord MetricsRecord::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kHeader) throw IoError("metrics.csv: unexpected header");
  MetricsRecord rec;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 12) throw IoError("metrics.csv: expected 12 columns, got " + std::to_string(f.size()));
    auto num = [](const std::string& s) { return std::stod(s); };
    auto opt = [&](const std::string& s) { return s.empty() ? std::optional<double>() : std::optional<double>(num(s)); };
    MetricsRow r;
    r.session = std::stoul(f[0]);
    r.acc = num(f[1]);
    r.base_acc = opt(f[2]);
    r.novel_acc = opt(f[3]);
    r.b2bn = opt(f[4]);
    r.n2bn = opt(f[5]);
    r.b2b = opt(f[6]);
    r.n2n = opt(f[7]);
    r.alpha_l = num(f[8]);
    r.alpha_g = num(f[9]);
    r.seed = std::stoull(f[10]);
    r.tag = f[11];
    rec.append(std::move(r));
  }
  return rec;
}

}  // namespace lgsp::protocol
