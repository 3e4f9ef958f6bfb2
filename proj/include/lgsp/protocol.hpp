#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "lgsp/classifier.hpp"

// Few-shot class-incremental session mechanics: class/sample assignment,
// training-access guard, cumulative evaluation, metrics.
namespace lgsp::protocol {

using classifier::ClassId;

enum class Split { Pretext, Train, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestRow {
  std::string file;
  ClassId label = 0;
  Split split = Split::Train;
};

struct FscilSpec {
  std::size_t base_classes = 10;
  std::size_t base_shots = 20;
  std::size_t sessions = 5;  // novel sessions after the base session
  std::size_t n_way = 2;
  std::size_t k_shot = 5;
  std::size_t test_per_class = 15;
  std::uint64_t seed = 42;

  std::size_t total_classes() const { return base_classes + sessions * n_way; }
  void validate() const;
};

struct SessionData {
  std::size_t index = 0;
  std::vector<ClassId> classes;
  std::vector<std::size_t> train;  // manifest row indices
  std::vector<std::size_t> test;   // this session's own test rows
};

// Seeded assignment of manifest classes to sessions. Pretext rows are ignored.
std::vector<SessionData> build_sessions(const FscilSpec& spec, const std::vector<ManifestRow>& manifest);

// Only rows registered for the current session may be used for training.
class TrainingGuard {
 public:
  TrainingGuard() = default;
  explicit TrainingGuard(const SessionData& session);
  void check(std::size_t row) const;
  std::size_t session() const { return session_; }

 private:
  std::size_t session_ = 0;
  std::unordered_set<std::size_t> allowed_;
};

class SessionState {
 public:
  // Registers session t; sessions must arrive in order 0, 1, 2, ...
  void begin(const SessionData& session);

  std::size_t completed() const { return completed_; }
  bool started() const { return started_; }
  std::size_t current() const { return current_; }
  const std::vector<ClassId>& seen() const { return seen_; }
  const std::vector<ClassId>& base() const { return base_; }
  const std::vector<std::size_t>& cumulative_test() const { return cumulative_test_; }
  bool is_base(ClassId id) const;

  void finish();

  // Reconstructs the state after `completed` sessions.
  static SessionState replay(const std::vector<SessionData>& sessions, std::size_t completed);

 private:
  std::size_t completed_ = 0;
  std::size_t current_ = 0;
  bool started_ = false;
  std::vector<ClassId> seen_;
  std::vector<ClassId> base_;
  std::vector<std::size_t> cumulative_test_;
};

struct Breakdown {
  std::optional<double> b2bn;  // base samples, argmax over base + novel classes
  std::optional<double> n2bn;  // novel samples, argmax over base + novel classes
  std::optional<double> b2b;   // base samples, argmax over base classes only
  std::optional<double> n2n;   // novel samples, argmax over novel classes only
  double overall = 0.0;
};

// `truth[i]` is the label of predictions[i]; scores follow bank order.
Breakdown breakdown(const std::vector<classifier::Prediction>& predictions, const std::vector<ClassId>& truth,
                    const classifier::PrototypeBank& bank, const SessionState& state);

struct MetricsRow {
  std::size_t session = 0;
  double acc = 0.0;
  std::optional<double> base_acc, novel_acc, b2bn, n2bn, b2b, n2n;
  double alpha_l = 0.0;
  double alpha_g = 0.0;
  std::uint64_t seed = 0;
  std::string tag;
};

class MetricsRecord {
 public:
  static constexpr const char* kHeader = "session,acc,base_acc,novel_acc,b2bn,n2bn,b2b,n2n,alpha_l,alpha_g,seed,tag";

  void append(MetricsRow row);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  // Arithmetic mean of the recorded session accuracies.
  double average() const;

  std::string to_csv() const;
  static MetricsRecord from_csv(const std::string& text);

 private:
  std::vector<MetricsRow> rows_;
};

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace lgsp::protocol
