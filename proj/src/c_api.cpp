#include "lgsp/lgsp.h"

#include <atomic>
#include <cstring>
#include <string>

#include "lgsp/config.hpp"
#include "lgsp/datagen.hpp"
#include "lgsp/error.hpp"
#include "lgsp/experiment.hpp"
#include "lgsp/io.hpp"

struct lgsp_config {
  lgsp::config::ExperimentConfig value;
};

namespace {

thread_local std::string last_error;
std::atomic<std::size_t> run_threads{0};

template <typename Fn>
lgsp_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    return fn();
  } catch (const lgsp::ConfigError& e) {
    last_error = e.what();
    return LGSP_ERR_CONFIG;
  } catch (const lgsp::IoError& e) {
    last_error = e.what();
    return LGSP_ERR_IO;
  } catch (const lgsp::InvariantViolation& e) {
    last_error = std::string("invariant violated: ") + e.what();
    return LGSP_ERR_INVARIANT;
  } catch (const lgsp::InvalidArgument& e) {
    last_error = e.what();
    return LGSP_ERR_INVALID_ARGUMENT;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return LGSP_ERR_IO;
  } catch (const std::exception& e) {
    last_error = e.what();
    return LGSP_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return LGSP_ERR_INTERNAL;
  }
}

lgsp_status null_arg(const char* what) {
  last_error = std::string(what) + " must not be NULL";
  return LGSP_ERR_INVALID_ARGUMENT;
}

lgsp_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > s.size()) {
    std::memcpy(buf, s.c_str(), s.size() + 1);
  } else if (buf) {
    last_error = "buffer too small";
    return LGSP_ERR_INVALID_ARGUMENT;
  }
  return LGSP_OK;
}

}  // namespace

extern "C" {

const char* lgsp_last_error(void) { return last_error.c_str(); }

void lgsp_set_threads(size_t threads) { run_threads = threads; }

const char* lgsp_status_name(lgsp_status status) {
  switch (status) {
    case LGSP_OK:
      return "ok";
    case LGSP_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case LGSP_ERR_IO:
      return "i/o error";
    case LGSP_ERR_CONFIG:
      return "config error";
    case LGSP_ERR_INVARIANT:
      return "invariant violation";
    case LGSP_ERR_CHECK_FAILED:
      return "check failed";
    case LGSP_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

lgsp_status lgsp_config_new(lgsp_config** out) {
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new lgsp_config{};
    return LGSP_OK;
  });
}

lgsp_status lgsp_config_parse(const char* text, lgsp_config** out) {
  if (!text) return null_arg("text");
  if (!out) return null_arg("out");
  return guarded([&] {
    auto cfg = lgsp::config::parse(text);
    *out = new lgsp_config{std::move(cfg)};
    return LGSP_OK;
  });
}

lgsp_status lgsp_config_load(const char* path, lgsp_config** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  return guarded([&] {
    auto cfg = lgsp::config::parse(lgsp::io::read_text(path));
    *out = new lgsp_config{std::move(cfg)};
    return LGSP_OK;
  });
}

void lgsp_config_free(lgsp_config* cfg) { delete cfg; }

lgsp_status lgsp_config_set(lgsp_config* cfg, const char* key, const char* value) {
  if (!cfg) return null_arg("cfg");
  if (!key || !value) return null_arg("key/value");
  return guarded([&] {
    lgsp::config::set(cfg->value, key, value);
    return LGSP_OK;
  });
}

lgsp_status lgsp_config_get(const lgsp_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return null_arg("cfg");
  if (!key) return null_arg("key");
  return guarded([&] { return copy_out(lgsp::config::get(cfg->value, key), buf, cap, needed); });
}

lgsp_status lgsp_config_resolved(const lgsp_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] { return copy_out(lgsp::config::resolved(cfg->value), buf, cap, needed); });
}

lgsp_status lgsp_config_validate(const lgsp_config* cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    lgsp::config::validate(cfg->value);
    return LGSP_OK;
  });
}

lgsp_status lgsp_datagen(const lgsp_config* cfg, const char* out_dir, size_t* files) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    std::filesystem::path dir = out_dir ? out_dir : cfg->value.data.dir;
    auto rows = lgsp::datagen::generate(cfg->value.data, cfg->value.seed, dir);
    if (files) *files = rows.size();
    return LGSP_OK;
  });
}

lgsp_status lgsp_run(const lgsp_config* cfg, const char* run_dir, double* avg) {
  if (!cfg) return null_arg("cfg");
  if (!run_dir) return null_arg("run_dir");
  return guarded([&] {
    auto rec = lgsp::experiment::run(cfg->value, run_dir);
    if (avg) *avg = rec.average();
    return LGSP_OK;
  });
}

lgsp_status lgsp_train_base(const lgsp_config* cfg, const char* run_dir, double* acc) {
  if (!cfg) return null_arg("cfg");
  if (!run_dir) return null_arg("run_dir");
  return guarded([&] {
    auto row = lgsp::experiment::train_base(cfg->value, run_dir);
    if (acc) *acc = row.acc;
    return LGSP_OK;
  });
}

lgsp_status lgsp_train_novel(const char* run_dir, size_t* session, double* acc) {
  if (!run_dir) return null_arg("run_dir");
  return guarded([&] {
    auto row = lgsp::experiment::train_novel(run_dir, run_threads);
    if (session) *session = row.session;
    if (acc) *acc = row.acc;
    return LGSP_OK;
  });
}

lgsp_status lgsp_eval(const char* run_dir, double* acc) {
  if (!run_dir) return null_arg("run_dir");
  return guarded([&] {
    auto row = lgsp::experiment::eval(run_dir, run_threads);
    if (acc) *acc = row.acc;
    return LGSP_OK;
  });
}

lgsp_status lgsp_sweep_pool(const lgsp_config* cfg, const char* out_dir) {
  if (!cfg) return null_arg("cfg");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    lgsp::experiment::sweep_pool(cfg->value, out_dir);
    return LGSP_OK;
  });
}

lgsp_status lgsp_grad_check(const lgsp_config* cfg, const char* csv_path, double* max_rel_error) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    auto report = lgsp::experiment::grad_check(cfg->value);
    if (csv_path) lgsp::io::write_text(csv_path, report.to_csv());
    if (max_rel_error) *max_rel_error = report.max_rel_error();
    if (!report.pass()) {
      for (const auto& e : report.entries) {
        if (!e.pass) {
          last_error = "gradient check failed for " + e.name;
          break;
        }
      }
      return LGSP_ERR_CHECK_FAILED;
    }
    return LGSP_OK;
  });
}

lgsp_status lgsp_export(const char* run_dir, const char* what, const char* out_dir, size_t* count) {
  if (!run_dir) return null_arg("run_dir");
  if (!what) return null_arg("what");
  return guarded([&] {
    auto stems = lgsp::experiment::export_heatmaps(run_dir, what, out_dir ? out_dir : "", run_threads);
    if (count) *count = stems.size();
    return LGSP_OK;
  });
}

}  // extern "C"
