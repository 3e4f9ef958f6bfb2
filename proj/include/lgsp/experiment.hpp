#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lgsp/config.hpp"
#include "lgsp/learn.hpp"
#include "lgsp/model.hpp"
#include "lgsp/protocol.hpp"

// End-to-end drivers: pretext fit, session loop, checkpoints, sweeps and
// exports. Every output file is a pure function of config and seed.
namespace lgsp::experiment {

namespace fs = std::filesystem;

struct Dataset {
  fs::path dir;
  std::vector<protocol::ManifestRow> rows;
  std::vector<Tensor> images;

  // Reads manifest.csv and every listed tensor.
  static Dataset load(const fs::path& dir);
};

// Test hook: replaces the model's prediction for one cumulative-test row.
using PredictionHook = std::function<classifier::Prediction(std::size_t row, const classifier::Prediction& model)>;

class Trainer {
 public:
  Trainer(const config::ExperimentConfig& cfg, const Dataset& data);

  const config::ExperimentConfig& config() const { return cfg_; }
  model::Model& model() { return model_; }
  const model::Model& model() const { return model_; }
  const std::vector<protocol::SessionData>& sessions() const { return sessions_; }
  const protocol::SessionState& state() const { return state_; }
  const protocol::MetricsRecord& metrics() const { return metrics_; }
  std::size_t guard_checks() const { return guard_checks_; }

  // Fits the backbone on the pretext split with a cosine head, then freezes it.
  void pretext();
  bool pretext_done() const { return pretext_done_; }

  // Trains, fits prototypes and evaluates the next session.
  protocol::MetricsRow run_session();
  bool finished() const { return state_.completed() == sessions_.size(); }

  struct Evaluation {
    std::vector<std::size_t> rows;
    std::vector<classifier::ClassId> truth;
    std::vector<classifier::Prediction> predictions;
    protocol::Breakdown breakdown;
  };
  // Scores the cumulative test set of the sessions seen so far.
  Evaluation evaluate() const;

  void set_prediction_hook(PredictionHook hook) { hook_ = std::move(hook); }

  const std::string& train_log() const { return train_log_; }
  const std::string& per_class() const { return per_class_; }
  const std::map<std::size_t, std::string>& score_dumps() const { return scores_; }

  void save(const fs::path& run_dir) const;
  // Restores a trainer written by save(); the config must describe the same run.
  static Trainer restore(const config::ExperimentConfig& cfg, const Dataset& data, const fs::path& run_dir);

 private:
  const std::vector<double>& query(std::size_t row) const;
  void warm_queries(const std::vector<std::size_t>& rows) const;
  const Tensor& fetch_training(const protocol::TrainingGuard& guard, std::size_t row);
  std::vector<ad::Param*> prototypes_of(const std::vector<classifier::ClassId>& classes);
  void train_epochs(learn::Optimizer& opt, const protocol::TrainingGuard& guard, const std::vector<std::size_t>& rows,
                    const std::vector<classifier::ClassId>& label_space, std::size_t epochs, Rng& rng,
                    std::size_t session);

  config::ExperimentConfig cfg_;
  const Dataset* data_;
  model::Model model_;
  std::vector<protocol::SessionData> sessions_;
  protocol::SessionState state_;
  protocol::MetricsRecord metrics_;
  mutable std::map<std::size_t, std::vector<double>> queries_;
  bool pretext_done_ = false;
  std::size_t guard_checks_ = 0;
  PredictionHook hook_;
  std::string train_log_;
  std::string per_class_;
  std::map<std::size_t, std::string> scores_;
};

// Writes config.resolved, metrics.csv, train_log.csv, per_class.csv,
// sessions.csv, scores/ and model/ into `out`.
void write_run(const Trainer& trainer, const fs::path& out);

// Full protocol: pretext, base session and every novel session.
protocol::MetricsRecord run(const config::ExperimentConfig& cfg, const fs::path& out);
// Pretext and session 0 only.
protocol::MetricsRow train_base(const config::ExperimentConfig& cfg, const fs::path& out);
// Next session of a saved run.
protocol::MetricsRow train_novel(const fs::path& run_dir, std::size_t threads = 0);
// Re-evaluates a saved run on its current cumulative test set; writes eval.csv.
protocol::MetricsRow eval(const fs::path& run_dir, std::size_t threads = 0);

struct SweepPoint {
  std::size_t pool_size = 0;
  double base_session_acc = 0.0;   // A_0
  double novel_session_acc = 0.0;  // mean novel-class accuracy over sessions >= 1
  double avg = 0.0;
};
// Token pool sweep over cfg.sweep_pool_sizes with every entry selected.
std::vector<SweepPoint> sweep_pool(const config::ExperimentConfig& cfg, const fs::path& out);
std::string sweep_csv(const std::vector<SweepPoint>& points);

// Finite-difference check of every parameter group of a toy-sized model.
learn::GradCheckReport grad_check(const config::ExperimentConfig& cfg);

// what: cls | prompts | masks | local_prompts. Returns the written stems.
std::vector<fs::path> export_heatmaps(const fs::path& run_dir, const std::string& what, const fs::path& out,
                                      std::size_t threads = 0);

// threads = 0 keeps the default of one worker.
config::ExperimentConfig load_run_config(const fs::path& run_dir, std::size_t threads = 0);

}  // namespace lgsp::experiment
