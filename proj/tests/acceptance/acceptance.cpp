// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lgsp/config.hpp"
#include "lgsp/datagen.hpp"
#include "lgsp/error.hpp"
#include "lgsp/experiment.hpp"
#include "lgsp/fusion.hpp"
#include "lgsp/gsp.hpp"
#include "lgsp/io.hpp"
#include "lgsp/learn.hpp"
#include "lgsp/lsp.hpp"
#include "lgsp/spectral.hpp"
#include "oracles.hpp"

using namespace lgsp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::path(LGSP_TEST_SCRATCH) / "acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path source(const std::string& rel) { return fs::path(LGSP_SOURCE_DIR) / rel; }

config::ExperimentConfig load_cfg(const std::string& rel) { return config::parse(io::read_text(source(rel))); }

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = io::read_text(e.path());
  }
  return files;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(io::read_text(path));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

double sigma(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------

Outcome spectral_correctness() {
  Rng rng(101);
  double round_trip = 0.0, parseval = 0.0, naive_vs_fast = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::size_t h = 2 + rng.below(63), w = 2 + rng.below(63);
    Tensor x = randn({1, 1, h, w}, rng);
    auto f = spectral::dft2_centered(x);
    auto back = spectral::idft2_centered(f);
    round_trip = std::max(round_trip, max_abs_diff(back.image, x));
    double ex = 0.0, ef = 0.0;
    for (double v : x.data()) ex += v * v;
    for (const auto& c : f.data) ef += std::norm(c);
    parseval = std::max(parseval, std::abs(ef / static_cast<double>(h * w) - ex) / ex);

    std::size_t ph = std::size_t{1} << (1 + rng.below(6)), pw = std::size_t{1} << (1 + rng.below(6));
    Tensor y = randn({1, 1, ph, pw}, rng);
    auto a = spectral::dft2_centered(y, spectral::Method::Naive);
    auto b = spectral::dft2_centered(y, spectral::Method::Radix2);
    for (std::size_t j = 0; j < a.data.size(); ++j) naive_vs_fast = std::max(naive_vs_fast, std::abs(a.data[j] - b.data[j]));
    auto ia = spectral::idft2_centered(a, spectral::Method::Naive);
    auto ib = spectral::idft2_centered(a, spectral::Method::Radix2);
    naive_vs_fast = std::max(naive_vs_fast, max_abs_diff(ia.image, ib.image));
  }
  return {round_trip <= 1e-9 && parseval <= 1e-9 && naive_vs_fast <= 1e-9,
          "round trip " + fmt(round_trip) + ", Parseval rel " + fmt(parseval) + ", naive vs radix-2 " + fmt(naive_vs_fast)};
}

Outcome mask_algebra() {
  Rng rng(202);
  double tele = 0.0, annulus = 0.0, symmetry = 0.0, wsum = 0.0;
  const std::size_t n = 32;
  for (std::size_t K : {1u, 4u, 8u, 100u}) {
    for (auto mode : {gsp::FormulaMode::Verbatim, gsp::FormulaMode::Annulus}) {
      gsp::RingBankOptions o;
      o.rings = K;
      o.beta = 10.0;
      o.mode = mode;
      gsp::RingBank bank(n, n, o, rng);
      Tensor sum({n, n});
      for (std::size_t k = 1; k <= K; ++k) {
        Tensor m = bank.ring_mask(k);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += m[i];
      }
      const double rK = bank.radii().back(), beta = o.beta;
      for (std::size_t i = 0; i < sum.size(); ++i) {
        double d = bank.distance()[i];
        double expect = mode == gsp::FormulaMode::Verbatim ? sigma(-beta * (d - rK)) - sigma(-beta * d)
                                                           : sigma(beta * (rK - d)) - sigma(beta * (0.0 - d));
        double& slot = mode == gsp::FormulaMode::Verbatim ? tele : annulus;
        slot = std::max(slot, std::abs(sum[i] - expect));
        slot = std::max(slot, std::abs(sum[i] - bank.telescoped_mask()[i]));
      }
      // Reflections about the center row/column and the diagonal keep D fixed.
      Tensor c = bank.combined_mask().reshaped({n, n});
      for (std::size_t y = 1; y < n; ++y) {
        for (std::size_t x = 1; x < n; ++x) {
          double v = c[y * n + x];
          symmetry = std::max({symmetry, std::abs(v - c[(n - y) * n + x]), std::abs(v - c[y * n + (n - x)]),
                               std::abs(v - c[x * n + y])});
        }
      }
      double s = 0.0;
      for (double w : bank.band_weights()) s += w;
      wsum = std::max(wsum, std::abs(s - 1.0));
    }
  }
  return {tele <= 1e-12 && annulus <= 1e-12 && symmetry <= 1e-12 && wsum <= 1e-12,
          "telescoping " + fmt(tele) + ", annulus " + fmt(annulus) + ", symmetry " + fmt(symmetry) + ", weight sum " +
              fmt(wsum)};
}

Outcome real_output() {
  Rng rng(303);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::size_t h = 2 * (1 + rng.below(32)), w = 2 * (1 + rng.below(32));
    gsp::RingBankOptions o;
    o.rings = 1 + rng.below(16);
    o.mode = rng.below(2) ? gsp::FormulaMode::Verbatim : gsp::FormulaMode::Annulus;
    gsp::RingBank bank(h, w, o, rng);
    auto e = gsp::enhance(randn({1, 1 + rng.below(3), h, w}, rng), bank);
    worst = std::max(worst, e.max_imag_residue);
  }
  return {worst <= 1e-9, "max imaginary residue " + fmt(worst) + " over 100 even-sized images"};
}

Outcome gradient_suite(double seconds_limit, double& seconds) {
  auto t0 = std::chrono::steady_clock::now();
  auto rep = experiment::grad_check(load_cfg("configs/smoke.cfg"));
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t failed = 0;
  double linear = 0.0;
  for (const auto& e : rep.entries) {
    failed += !e.pass;
    if (e.name.rfind("linear.", 0) == 0) linear = std::max(linear, e.max_rel_error);
  }
  return {rep.pass() && seconds < seconds_limit, std::to_string(rep.entries.size()) + " groups, " +
                                                     std::to_string(failed) + " failed, max rel " +
                                                     fmt(rep.max_rel_error()) + ", linear paths " + fmt(linear)};
}

Outcome selection_oracle() {
  Rng rng(505);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    lsp::PoolOptions o;
    o.pool_size = 1 + rng.below(8);
    o.n_select = 1 + rng.below(o.pool_size);
    o.d_model = o.d_key = 2 + rng.below(6);
    o.in_channels = 1;
    o.hidden_channels = 1;
    Rng pool_rng = rng.fork(static_cast<std::uint64_t>(i));
    lsp::PromptPool pool(o, pool_rng);
    std::vector<double> q = randn({o.d_key}, rng).values();
    std::vector<double> cos(o.pool_size);
    for (std::size_t m = 0; m < o.pool_size; ++m) {
      const Tensor& k = pool.entries()[m].key.value;
      double dot = 0.0, nq = 0.0, nk = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) {
        dot += q[j] * k[j];
        nq += q[j] * q[j];
        nk += k[j] * k[j];
      }
      cos[m] = dot / std::sqrt(nq * nk);
    }
    auto got = lsp::select_topk(q, pool);
    std::sort(got.begin(), got.end());
    mismatches += got != oracle::best_subset(cos, o.n_select);
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 instances"};
}

Outcome protocol_integrity() {
  auto cfg = load_cfg("configs/smoke.cfg");
  fs::path dir = scratch("protocol");
  datagen::generate(cfg.data, cfg.seed, dir / "data");
  cfg.data.dir = (dir / "data").string();
  auto data = experiment::Dataset::load(cfg.data.dir);
  experiment::Trainer tr(cfg, data);
  while (!tr.finished()) tr.run_session();
  experiment::write_run(tr, dir / "run");

  // Leakage guard: every training fetch was checked, and a foreign row is refused.
  bool guard_ok = tr.guard_checks() > 0;
  try {
    protocol::TrainingGuard(tr.sessions()[1]).check(tr.sessions()[0].train[0]);
    guard_ok = false;
  } catch (const InvariantViolation&) {
  }

  auto rows = read_csv(dir / "run" / "metrics.csv");
  double sum = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) sum += std::stod(rows[i][1]);
  double avg = sum / static_cast<double>(rows.size() - 1);
  double avg_err = std::abs(avg - tr.metrics().average());

  bool counts_ok = rows.size() - 1 == cfg.fscil.sessions + 1;
  std::string counts;
  for (const auto& [t, dump] : tr.score_dumps()) {
    std::istringstream is(dump);
    std::string line;
    std::getline(is, line);
    std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 2;
    std::vector<std::string> labels;
    while (std::getline(is, line)) {
      auto a = line.find(',') + 1;
      labels.push_back(line.substr(a, line.find(',', a) - a));
    }
    std::sort(labels.begin(), labels.end());
    std::size_t distinct = static_cast<std::size_t>(std::unique(labels.begin(), labels.end()) - labels.begin());
    std::size_t expect = cfg.fscil.base_classes + t * cfg.fscil.n_way;
    counts_ok &= columns == expect && distinct == expect;
    counts += (counts.empty() ? "" : "/") + std::to_string(distinct);
  }
  return {guard_ok && avg_err <= 1e-12 && counts_ok, std::to_string(tr.guard_checks()) + " guarded fetches, Avg " +
                                                         fmt(avg) + " (diff " + fmt(avg_err) + "), classes " + counts};
}

fs::path bench_data() {
  static fs::path dir;
  if (dir.empty()) {
    auto cfg = load_cfg("configs/bench.cfg");
    dir = scratch("bench_data");
    datagen::generate(cfg.data, cfg.seed, dir);
  }
  return dir;
}

Outcome saturation(double limit, double& seconds) {
  auto t0 = std::chrono::steady_clock::now();
  auto cfg = load_cfg("configs/sweep.cfg");
  cfg.data.dir = bench_data().string();
  auto points = experiment::sweep_pool(cfg, scratch("sweep"));
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto golden = read_csv(source("tests/golden/sweep.csv"));
  bool reproduced = golden.size() == points.size() + 1;
  std::map<std::size_t, std::pair<double, double>> g;  // pool size -> (base, novel)
  for (std::size_t i = 1; i < golden.size(); ++i) {
    std::size_t size = std::stoul(golden[i][0]);
    g[size] = {std::stod(golden[i][1]), std::stod(golden[i][2])};
    if (i - 1 < points.size()) {
      const auto& p = points[i - 1];
      reproduced &= p.pool_size == size && std::abs(p.base_session_acc - g[size].first) <= 1e-12 &&
                    std::abs(p.novel_session_acc - g[size].second) <= 1e-12 &&
                    std::abs(p.avg - std::stod(golden[i][3])) <= 1e-12;
    }
  }
  if (!g.count(4) || !g.count(64)) return {false, "golden lacks pool sizes 4 and 64"};
  double novel_drop = g[4].second - g[64].second;
  double base_drop = g[4].first - g[64].first;
  bool trend = g[64].second <= g[4].second && base_drop < novel_drop;
  return {reproduced && trend && seconds < limit,
          std::string(reproduced ? "golden reproduced" : "golden NOT reproduced") + "; novel@4 " + fmt(g[4].second) +
              " novel@64 " + fmt(g[64].second) + ", base drop " + fmt(base_drop) + " vs novel drop " + fmt(novel_drop)};
}

Outcome ablation(double limit, double& seconds) {
  auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> variants = {
      {"full", {}},
      {"vpt", {{"lsp.enabled", "false"}, {"gsp.enabled", "false"}}},
      {"vpt_lsp", {{"gsp.enabled", "false"}}},
      {"vpt_gsp", {{"lsp.enabled", "false"}}}};
  auto golden = read_csv(source("tests/golden/ablation.csv"));
  std::map<std::string, double> g;
  for (std::size_t i = 1; i < golden.size(); ++i) g[golden[i][0]] = std::stod(golden[i][1]);
  bool reproduced = true;
  std::string detail;
  for (const auto& [name, overrides] : variants) {
    auto cfg = load_cfg("configs/bench.cfg");
    cfg.data.dir = bench_data().string();
    for (const auto& [k, v] : overrides) config::set(cfg, k, v);
    double avg = experiment::run(cfg, scratch("ablation_" + name)).average();
    reproduced &= g.count(name) && std::abs(avg - g[name]) <= 1e-12;
    detail += name + " " + fmt(avg) + " ";
  }
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool wins = g.count("full") && g["full"] >= g["vpt"] && g["full"] >= g["vpt_lsp"] && g["full"] >= g["vpt_gsp"];
  return {reproduced && wins && seconds < limit, detail + (reproduced ? "(golden reproduced)" : "(golden NOT reproduced)")};
}

Outcome determinism() {
  auto base = load_cfg("configs/smoke.cfg");
  fs::path dir = scratch("determinism");
  datagen::generate(base.data, base.seed, dir / "data");
  base.data.dir = (dir / "data").string();
  std::vector<std::map<std::string, std::string>> trees;
  for (std::size_t threads : {1u, 3u}) {
    auto cfg = base;
    cfg.threads = threads;
    fs::path run = dir / ("run_t" + std::to_string(threads));
    experiment::run(cfg, run);
    for (const char* what : {"cls", "prompts", "masks", "local_prompts"}) experiment::export_heatmaps(run, what, {}, threads);
    trees.push_back(read_tree(run));
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) differing += !trees[1].count(name) || trees[1].at(name) != bytes;
  differing += trees[0].size() != trees[1].size();
  bool has_exports = trees[0].count("exports/cls/sample0.pgm") && trees[0].count("metrics.csv");
  return {differing == 0 && has_exports,
          std::to_string(trees[0].size()) + " files compared (threads 1 vs 3), " + std::to_string(differing) + " differ"};
}

Outcome fusion_modes() {
  Rng rng(1010);
  Tensor x = randn({1, 3, 8, 8}, rng), pl = randn({1, 3, 8, 8}, rng), xg = randn({1, 3, 8, 8}, rng);
  fusion::FusionParams zero(fusion::ConstraintMode::Independent, 0.0, 0.0);
  bool identity = fusion::fuse(x, pl, xg, zero) == x;
  ad::Tape tape;
  identity &= fusion::fuse(tape, tape.constant(x), tape.constant(pl), tape.constant(xg), zero).value() == x;

  fusion::FusionParams p(fusion::ConstraintMode::FixedSum, 0.5, 0.5);
  Tensor target = randn({1, 3, 8, 8}, rng);
  learn::Optimizer opt;
  opt.add(learn::ParamGroup("fusion", {&p.alpha_l_param(), &p.alpha_g_param()}, 0.01));
  double worst = 0.0;
  for (int step = 0; step < 100; ++step) {
    opt.zero_grad();
    ad::Tape t;
    ad::Var d = ad::sub(fusion::fuse(t, t.constant(x), t.constant(pl), t.constant(xg), p), t.constant(target));
    t.backward(ad::scale(ad::sum(ad::mul(d, d)), 1.0 / static_cast<double>(x.size())));
    opt.step();
    worst = std::max(worst, std::abs(p.alpha_l() + p.alpha_g() - 1.0));
  }
  bool bounded = std::isfinite(p.alpha_l()) && std::abs(p.alpha_l()) < 10.0;

  // Same constraint through a full training run.
  auto cfg = load_cfg("configs/smoke.cfg");
  fs::path dir = scratch("fixed_sum");
  datagen::generate(cfg.data, cfg.seed, dir / "data");
  cfg.data.dir = (dir / "data").string();
  cfg.fusion.constraint_mode = fusion::ConstraintMode::FixedSum;
  auto rec = experiment::run(cfg, dir / "run");
  for (const auto& r : rec.rows()) worst = std::max(worst, std::abs(r.alpha_l + r.alpha_g - 1.0));
  bool moved = rec.rows().back().alpha_l != 0.5;
  return {identity && bounded && worst <= 1e-12 && moved,
          std::string(identity ? "identity exact" : "identity broken") + ", max |a_l + a_g - 1| " + fmt(worst) +
              " over 100 steps and a smoke run, final a_l " + fmt(p.alpha_l())};
}

}  // namespace

// Optional arguments pick criteria by number; none runs all ten.
int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double limit;  // seconds, 0 = none
    std::function<Outcome(double&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "spectral correctness", 30, [](double&) { return spectral_correctness(); }},
      {2, "ring mask algebra", 0, [](double&) { return mask_algebra(); }},
      {3, "real-output guarantee", 0, [](double&) { return real_output(); }},
      {4, "gradient suite", 120, [](double& s) { return gradient_suite(120, s); }},
      {5, "selection oracle", 10, [](double&) { return selection_oracle(); }},
      {6, "protocol integrity", 0, [](double&) { return protocol_integrity(); }},
      {7, "token pool saturation", 900, [](double& s) { return saturation(900, s); }},
      {8, "full model vs single components", 1800, [](double& s) { return ablation(1800, s); }},
      {9, "determinism across thread counts", 0, [](double&) { return determinism(); }},
      {10, "fusion identity and fixed sum", 0, [](double&) { return fusion_modes(); }},
  };
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  int failures = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    auto t0 = std::chrono::steady_clock::now();
    double timed = -1.0;
    Outcome o;
    try {
      o = c.run(timed);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (timed < 0.0) timed = secs;
    if (c.limit > 0.0 && timed >= c.limit) o.pass = false;
    failures += !o.pass;
    std::printf("criterion %2d %-34s %s  (%.1fs%s) %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", timed,
                c.limit > 0.0 ? (" / limit " + std::to_string(static_cast<int>(c.limit)) + "s").c_str() : "",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
