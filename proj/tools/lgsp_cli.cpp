// lgsp: command line front end over the C API.
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lgsp/lgsp.h"

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::string run;
  std::vector<std::string> overrides;
  unsigned long long seed = 0;
  std::size_t threads = 0;
  bool seed_set = false;
};

int fail(lgsp_status s) {
  std::fprintf(stderr, "lgsp: %s: %s\n", lgsp_status_name(s), lgsp_last_error());
  return static_cast<int>(s);
}

struct ConfigHandle {
  lgsp_config* ptr = nullptr;
  ~ConfigHandle() { lgsp_config_free(ptr); }
};

// Loads --config (or defaults), then --set overrides, --seed and --threads.
lgsp_status load(const Common& c, ConfigHandle& h) {
  lgsp_status s = c.config_path.empty() ? lgsp_config_new(&h.ptr) : lgsp_config_load(c.config_path.c_str(), &h.ptr);
  if (s != LGSP_OK) return s;
  for (const auto& kv : c.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "lgsp: --set expects key=value, got '%s'\n", kv.c_str());
      return LGSP_ERR_CONFIG;
    }
    s = lgsp_config_set(h.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != LGSP_OK) return s;
  }
  if (c.seed_set && (s = lgsp_config_set(h.ptr, "seed", std::to_string(c.seed).c_str())) != LGSP_OK) return s;
  if (c.threads > 0 && (s = lgsp_config_set(h.ptr, "threads", std::to_string(c.threads).c_str())) != LGSP_OK) return s;
  return lgsp_config_validate(h.ptr);
}

void add_config_flags(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Override a config key, e.g. --set lsp.pool_size=10");
  app->add_option_function<unsigned long long>(
      "--seed", [&c](const unsigned long long& v) { c.seed = v, c.seed_set = true; }, "Seed (overrides config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local-global spatial prompting for few-shot class-incremental learning (toy scale)"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--threads", c.threads, "Worker threads for evaluation")->envname("LGSP_THREADS");

  auto* datagen = app.add_subcommand("datagen", "Write the synthetic dataset");
  add_config_flags(datagen, c);
  datagen->add_option("--out", c.out, "Dataset directory (default: data.dir)");

  auto* run = app.add_subcommand("run", "Pretext fit, base session and all novel sessions");
  auto* train_base = app.add_subcommand("train-base", "Pretext fit and base session");
  auto* sweep = app.add_subcommand("sweep-pool", "Token pool size sweep");
  for (auto* sub : {run, train_base, sweep}) {
    add_config_flags(sub, c);
    sub->add_option("--out", c.out, "Output directory")->required();
  }

  auto* train_novel = app.add_subcommand("train-novel", "Run the next novel session of a saved run");
  auto* eval = app.add_subcommand("eval", "Evaluate a saved run on its cumulative test set");
  for (auto* sub : {train_novel, eval}) sub->add_option("--run,--out", c.run, "Run directory")->required();

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every parameter group");
  add_config_flags(grad, c);
  grad->add_option("--out", c.out, "Directory for grad_check.csv");

  std::string what = "cls";
  auto* heat = app.add_subcommand("export-heatmaps", "Export attention maps, masks or local prompts as PGM + CSV");
  heat->add_option("--what", what, "cls | prompts | masks | local_prompts")
      ->check(CLI::IsMember({"cls", "prompts", "masks", "local_prompts"}));
  auto* masks = app.add_subcommand("export-masks", "Export per-ring and combined frequency masks");
  for (auto* sub : {heat, masks}) {
    sub->add_option("--run", c.run, "Run directory")->required();
    sub->add_option("--out", c.out, "Export directory (default: <run>/exports)");
  }

  CLI11_PARSE(app, argc, argv);
  lgsp_set_threads(c.threads);

  ConfigHandle h;
  lgsp_status s = LGSP_OK;
  if (datagen->parsed()) {
    if ((s = load(c, h)) != LGSP_OK) return fail(s);
    std::size_t files = 0;
    if ((s = lgsp_datagen(h.ptr, c.out.empty() ? nullptr : c.out.c_str(), &files)) != LGSP_OK) return fail(s);
    std::printf("wrote %zu samples\n", files);
  } else if (run->parsed()) {
    if ((s = load(c, h)) != LGSP_OK) return fail(s);
    double avg = 0;
    if ((s = lgsp_run(h.ptr, c.out.c_str(), &avg)) != LGSP_OK) return fail(s);
    std::printf("avg %.6f\n", avg);
  } else if (train_base->parsed()) {
    if ((s = load(c, h)) != LGSP_OK) return fail(s);
    double acc = 0;
    if ((s = lgsp_train_base(h.ptr, c.out.c_str(), &acc)) != LGSP_OK) return fail(s);
    std::printf("session 0 acc %.6f\n", acc);
  } else if (train_novel->parsed()) {
    std::size_t session = 0;
    double acc = 0;
    if ((s = lgsp_train_novel(c.run.c_str(), &session, &acc)) != LGSP_OK) return fail(s);
    std::printf("session %zu acc %.6f\n", session, acc);
  } else if (eval->parsed()) {
    double acc = 0;
    if ((s = lgsp_eval(c.run.c_str(), &acc)) != LGSP_OK) return fail(s);
    std::printf("acc %.6f\n", acc);
  } else if (sweep->parsed()) {
    if ((s = load(c, h)) != LGSP_OK) return fail(s);
    if ((s = lgsp_sweep_pool(h.ptr, c.out.c_str())) != LGSP_OK) return fail(s);
    std::printf("wrote %s/sweep.csv\n", c.out.c_str());
  } else if (grad->parsed()) {
    if ((s = load(c, h)) != LGSP_OK) return fail(s);
    std::string csv = (c.out.empty() ? std::string(".") : c.out) + "/grad_check.csv";
    double worst = 0;
    s = lgsp_grad_check(h.ptr, csv.c_str(), &worst);
    std::printf("max relative error %.3e, report in %s\n", worst, csv.c_str());
    if (s != LGSP_OK) return fail(s);
  } else if (heat->parsed() || masks->parsed()) {
    std::size_t count = 0;
    const char* kind = masks->parsed() ? "masks" : what.c_str();
    if ((s = lgsp_export(c.run.c_str(), kind, c.out.empty() ? nullptr : c.out.c_str(), &count)) != LGSP_OK) {
      return fail(s);
    }
    std::printf("exported %zu %s images\n", count, kind);
  }
  return 0;
}
