#include "lgsp/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "lgsp/error.hpp"

namespace lgsp::config {

namespace {

using Cfg = ExperimentConfig;

struct Field {
  std::string key;
  std::function<std::string(const Cfg&)> get;
  std::function<void(Cfg&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad(key, v, "a finite number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (const auto& i : items) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += i;
    } else {
      out += std::to_string(i);
    }
  }
  return out;
}

template <typename Ref>
Field u64_field(std::string key, Ref ref) {
  return {key, [ref](const Cfg& c) { return std::to_string(ref(c)); },
          [ref, key](Cfg& c, const std::string& v) { ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_u64(key, v)); }};
}

template <typename Ref>
Field double_field(std::string key, Ref ref) {
  return {key, [ref](const Cfg& c) { return protocol::format_double(ref(c)); },
          [ref, key](Cfg& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}

template <typename Ref>
Field bool_field(std::string key, Ref ref) {
  return {key, [ref](const Cfg& c) { return std::string(ref(c) ? "true" : "false"); },
          [ref, key](Cfg& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

template <typename Ref>
Field string_field(std::string key, Ref ref) {
  return {key, [ref](const Cfg& c) { return ref(c); }, [ref, key](Cfg& c, const std::string& v) {
            if (v.find_first_of(",\n") != std::string::npos) bad(key, v, "a value without commas or newlines");
            ref(c) = v;
          }};
}

template <typename Ref>
Field size_list_field(std::string key, Ref ref) {
  return {key, [ref](const Cfg& c) { return join(ref(c)); }, [ref, key](Cfg& c, const std::string& v) {
            std::vector<std::size_t> out;
            for (const auto& item : split_list(v)) out.push_back(parse_u64(key, item));
            ref(c) = out;
          }};
}

template <typename E, typename Ref>
Field enum_field(std::string key, Ref ref, std::vector<std::pair<std::string, E>> names) {
  return {key,
          [ref, names](const Cfg& c) {
            for (const auto& [n, e] : names) {
              if (e == ref(c)) return n;
            }
            return std::string("?");
          },
          [ref, key, names](Cfg& c, const std::string& v) {
            for (const auto& [n, e] : names) {
              if (n == v) {
                ref(c) = e;
                return;
              }
            }
            std::string choices;
            for (const auto& [n, e] : names) choices += (choices.empty() ? "" : "|") + n;
            bad(key, v, choices);
          }};
}

#define REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& schema() {
  using backbone::InsertMode;
  static const std::vector<std::pair<std::string, InsertMode>> insert = {
      {"none", InsertMode::None}, {"shallow", InsertMode::Shallow}, {"deep", InsertMode::Deep}};
  static const std::vector<Field> fields = {
      u64_field("seed", REF(seed)),
      u64_field("threads", REF(threads)),
      string_field("tag", REF(tag)),
      string_field("data.dir", REF(data.dir)),
      u64_field("data.channels", REF(data.channels)),
      u64_field("data.height", REF(data.height)),
      u64_field("data.width", REF(data.width)),
      u64_field("data.classes", REF(data.classes)),
      u64_field("data.pretext_classes", REF(data.pretext_classes)),
      u64_field("data.pretext_per_class", REF(data.pretext_per_class)),
      u64_field("data.train_per_class", REF(data.train_per_class)),
      u64_field("data.test_per_class", REF(data.test_per_class)),
      double_field("data.template_scale", REF(data.template_scale)),
      double_field("data.signature_scale", REF(data.signature_scale)),
      double_field("data.motif_scale", REF(data.motif_scale)),
      u64_field("data.motif_size", REF(data.motif_size)),
      u64_field("data.motif_atoms", REF(data.motif_atoms)),
      double_field("data.noise", REF(data.noise)),
      u64_field("fscil.base_classes", REF(fscil.base_classes)),
      u64_field("fscil.base_shots", REF(fscil.base_shots)),
      u64_field("fscil.sessions", REF(fscil.sessions)),
      u64_field("fscil.n_way", REF(fscil.n_way)),
      u64_field("fscil.k_shot", REF(fscil.k_shot)),
      u64_field("fscil.test_per_class", REF(fscil.test_per_class)),
      u64_field("backbone.patch", REF(backbone.patch)),
      u64_field("backbone.d_model", REF(backbone.d_model)),
      u64_field("backbone.layers", REF(backbone.layers)),
      u64_field("backbone.heads", REF(backbone.heads)),
      u64_field("backbone.mlp_hidden", REF(backbone.mlp_hidden)),
      u64_field("backbone.pretext_epochs", REF(backbone.pretext_epochs)),
      double_field("backbone.pretext_lr", REF(backbone.pretext_lr)),
      enum_field<InsertMode>("vpt.mode", REF(vpt.mode), insert),
      u64_field("vpt.length", REF(vpt.length)),
      enum_field<InsertMode>("tokpool.mode", REF(tokpool.mode), insert),
      u64_field("tokpool.size", REF(tokpool.size)),
      u64_field("tokpool.select", REF(tokpool.select)),
      u64_field("tokpool.length", REF(tokpool.length)),
      double_field("tokpool.key_weight", REF(tokpool.key_weight)),
      bool_field("lsp.enabled", REF(lsp.enabled)),
      u64_field("lsp.pool_size", REF(lsp.pool_size)),
      u64_field("lsp.n_select", REF(lsp.n_select)),
      double_field("lsp.tau", REF(lsp.tau)),
      bool_field("lsp.tau_learnable", REF(lsp.tau_learnable)),
      enum_field<lsp::SelectionMode>("lsp.selection_mode", REF(lsp.selection_mode),
                                     {{"hard", lsp::SelectionMode::Hard}, {"soft", lsp::SelectionMode::Soft}}),
      u64_field("lsp.hidden", REF(lsp.hidden)),
      size_list_field("lsp.kernels", REF(lsp.kernels)),
      double_field("lsp.dropout", REF(lsp.dropout)),
      bool_field("gsp.enabled", REF(gsp.enabled)),
      u64_field("gsp.rings", REF(gsp.rings)),
      double_field("gsp.beta", REF(gsp.beta)),
      double_field("gsp.tau", REF(gsp.tau)),
      bool_field("gsp.tau_learnable", REF(gsp.tau_learnable)),
      enum_field<gsp::FormulaMode>("gsp.formula_mode", REF(gsp.formula_mode),
                                   {{"verbatim", gsp::FormulaMode::Verbatim}, {"annulus", gsp::FormulaMode::Annulus}}),
      enum_field<fusion::ConstraintMode>(
          "fusion.constraint_mode", REF(fusion.constraint_mode),
          {{"independent", fusion::ConstraintMode::Independent}, {"fixed_sum", fusion::ConstraintMode::FixedSum}}),
      double_field("fusion.alpha_l", REF(fusion.alpha_l)),
      double_field("fusion.alpha_g", REF(fusion.alpha_g)),
      u64_field("train.base_epochs", REF(train.base_epochs)),
      u64_field("train.novel_epochs", REF(train.novel_epochs)),
      u64_field("train.batch_size", REF(train.batch_size)),
      double_field("train.base_lr", REF(train.base_lr)),
      double_field("train.novel_lr", REF(train.novel_lr)),
      double_field("train.lsp_lr", REF(train.lsp_lr)),
      double_field("train.gsp_base_lr", REF(train.gsp_base_lr)),
      double_field("train.gsp_novel_lr", REF(train.gsp_novel_lr)),
      double_field("train.fusion_lr", REF(train.fusion_lr)),
      double_field("train.momentum", REF(train.momentum)),
      double_field("train.logit_scale", REF(train.logit_scale)),
      Field{"train.novel_scope", [](const Cfg& c) { return join(c.train.novel_scope); },
            [](Cfg& c, const std::string& v) {
              auto items = split_list(v);
              for (const auto& i : items) {
                const auto& ok = scope_names();
                if (std::find(ok.begin(), ok.end(), i) == ok.end()) bad("train.novel_scope", i, "a known scope name");
              }
              c.train.novel_scope = items;
            }},
      bool_field("train.backbone_trainable", REF(train.backbone_trainable)),
      size_list_field("sweep.pool_sizes", REF(sweep_pool_sizes)),
      u64_field("export.samples", REF(export_samples)),
  };
  return fields;
}

#undef REF

const Field& find(const std::string& key) {
  for (const auto& f : schema()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void require(bool ok, const std::string& key, const std::string& message) {
  if (!ok) throw ConfigError(key + ": " + message);
}

}  // namespace

const std::vector<std::string>& scope_names() {
  static const std::vector<std::string> names = {"classifier", "vpt",  "tokpool", "lsp",     "lsp_keys",
                                                 "lsp_generators", "gsp", "fusion", "backbone"};
  return names;
}

std::vector<std::string> keys() {
  std::vector<std::string> out;
  for (const auto& f : schema()) out.push_back(f.key);
  return out;
}

void set(ExperimentConfig& cfg, const std::string& key, const std::string& value) { find(key).set(cfg, trim(value)); }

std::string get(const ExperimentConfig& cfg, const std::string& key) { return find(key).get(cfg); }

ExperimentConfig parse(const std::string& text, ExperimentConfig base) {
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    try {
      set(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return base;
}

std::string resolved(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : schema()) {
    if (f.key != "threads") out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void validate_data(const DataConfig& d) {
  require(d.channels >= 1, "data.channels", "must be positive");
  require(d.height >= 2 && d.width >= 2, "data.height", "images must be at least 2x2");
  require(d.classes >= 1, "data.classes", "must be positive");
  require(d.train_per_class + d.test_per_class >= 1, "data.train_per_class", "no samples requested");
  require(d.motif_size >= 1 && d.motif_size <= std::min(d.height, d.width), "data.motif_size",
          "must fit inside the image");
  for (double s : {d.template_scale, d.signature_scale, d.motif_scale, d.noise}) {
    require(s >= 0.0, "data", "scales and noise must be non-negative");
  }
}

void validate(const ExperimentConfig& c) {
  const auto& d = c.data;
  require(c.threads >= 1, "threads", "must be at least 1");
  validate_data(d);
  try {
    fscil_spec(c).validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("fscil: ") + e.what());
  }
  require(c.fscil.base_classes + c.fscil.sessions * c.fscil.n_way <= d.classes, "fscil.sessions",
          "base_classes + sessions * n_way exceeds data.classes");
  require(c.fscil.base_shots <= d.train_per_class, "fscil.base_shots", "exceeds data.train_per_class");
  require(c.fscil.k_shot <= d.train_per_class, "fscil.k_shot", "exceeds data.train_per_class");
  require(c.fscil.test_per_class <= d.test_per_class, "fscil.test_per_class", "exceeds data.test_per_class");

  const auto& b = c.backbone;
  require(b.patch >= 1 && d.height % b.patch == 0 && d.width % b.patch == 0, "backbone.patch",
          "must divide the image size");
  require(b.heads >= 1 && b.d_model % b.heads == 0, "backbone.heads", "must divide d_model");
  require(b.layers >= 1, "backbone.layers", "must be positive");
  require(b.mlp_hidden >= 1, "backbone.mlp_hidden", "must be positive");
  require(b.pretext_lr >= 0.0, "backbone.pretext_lr", "must be non-negative");
  require(b.pretext_epochs == 0 || d.pretext_classes >= 2, "data.pretext_classes",
          "pretext fitting needs at least two classes");

  require(c.vpt.mode == backbone::InsertMode::None || c.vpt.length >= 1, "vpt.length", "must be positive");
  if (c.tokpool.mode != backbone::InsertMode::None) {
    require(c.tokpool.size >= 1, "tokpool.size", "must be positive");
    require(c.tokpool.select >= 1 && c.tokpool.select <= c.tokpool.size, "tokpool.select",
            "must be in [1, tokpool.size]");
    require(c.tokpool.length >= 1, "tokpool.length", "must be positive");
  }
  require(c.tokpool.key_weight >= 0.0, "tokpool.key_weight", "must be non-negative");
  if (c.lsp.enabled) {
    require(c.lsp.pool_size >= 1, "lsp.pool_size", "must be positive");
    require(c.lsp.n_select >= 1 && c.lsp.n_select <= c.lsp.pool_size, "lsp.n_select", "must be in [1, lsp.pool_size]");
    require(c.lsp.tau > 0.0, "lsp.tau", "must be positive");
    require(c.lsp.hidden >= 1, "lsp.hidden", "must be positive");
    require(!c.lsp.kernels.empty(), "lsp.kernels", "needs at least one kernel size");
    for (auto k : c.lsp.kernels) require(k % 2 == 1, "lsp.kernels", "kernel sizes must be odd");
    require(c.lsp.dropout >= 0.0 && c.lsp.dropout < 1.0, "lsp.dropout", "must be in [0, 1)");
  }
  if (c.gsp.enabled) {
    require(c.gsp.rings >= 1 && c.gsp.rings <= 128, "gsp.rings", "must be in [1, 128]");
    require(c.gsp.beta > 0.0, "gsp.beta", "must be positive");
    require(c.gsp.tau > 0.0, "gsp.tau", "must be positive");
  }
  const auto& t = c.train;
  require(t.batch_size >= 1, "train.batch_size", "must be positive");
  for (double lr : {t.base_lr, t.novel_lr, t.lsp_lr, t.gsp_base_lr, t.gsp_novel_lr, t.fusion_lr}) {
    require(lr >= 0.0, "train", "learning rates must be non-negative");
  }
  require(t.momentum >= 0.0 && t.momentum < 1.0, "train.momentum", "must be in [0, 1)");
  require(t.logit_scale > 0.0, "train.logit_scale", "must be positive");
  require(std::find(t.novel_scope.begin(), t.novel_scope.end(), "fusion") == t.novel_scope.end(), "train.novel_scope",
          "fusion weights are trained in the base session only");
  for (auto s : c.sweep_pool_sizes) require(s >= 1, "sweep.pool_sizes", "sizes must be positive");
}

std::string effective_tag(const ExperimentConfig& c) {
  if (!c.tag.empty()) return c.tag;
  std::vector<std::string> parts;
  if (c.vpt.mode == backbone::InsertMode::Shallow) parts.push_back("vpt_shallow");
  if (c.vpt.mode == backbone::InsertMode::Deep) parts.push_back("vpt");
  if (c.tokpool.mode != backbone::InsertMode::None) parts.push_back("tokpool" + std::to_string(c.tokpool.size));
  if (c.lsp.enabled) parts.push_back(c.lsp.selection_mode == lsp::SelectionMode::Soft ? "lsp_soft" : "lsp");
  if (c.gsp.enabled) parts.push_back("gsp");
  if (c.lsp.enabled && c.gsp.enabled && c.fusion.constraint_mode == fusion::ConstraintMode::FixedSum) {
    parts.push_back("fixed_sum");
  }
  if (parts.empty()) return "plain";
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "+") + p;
  return out;
}

protocol::FscilSpec fscil_spec(const ExperimentConfig& c) {
  protocol::FscilSpec s = c.fscil;
  s.seed = c.seed;
  return s;
}

backbone::ViTOptions vit_options(const ExperimentConfig& c) {
  backbone::ViTOptions o;
  o.channels = c.data.channels;
  o.height = c.data.height;
  o.width = c.data.width;
  o.patch = c.backbone.patch;
  o.d_model = c.backbone.d_model;
  o.layers = c.backbone.layers;
  o.heads = c.backbone.heads;
  o.mlp_hidden = c.backbone.mlp_hidden;
  return o;
}

lsp::PoolOptions pool_options(const ExperimentConfig& c) {
  lsp::PoolOptions o;
  o.pool_size = c.lsp.pool_size;
  o.n_select = c.lsp.n_select;
  o.temperature = c.lsp.tau;
  o.learnable_temperature = c.lsp.tau_learnable;
  o.mode = c.lsp.selection_mode;
  o.in_channels = c.data.channels;
  o.hidden_channels = c.lsp.hidden;
  o.kernels = c.lsp.kernels;
  o.dropout = c.lsp.dropout;
  o.d_model = c.backbone.d_model;
  o.d_key = c.backbone.d_model;
  return o;
}

gsp::RingBankOptions ring_options(const ExperimentConfig& c) {
  gsp::RingBankOptions o;
  o.rings = c.gsp.rings;
  o.beta = c.gsp.beta;
  o.temperature = c.gsp.tau;
  o.learnable_temperature = c.gsp.tau_learnable;
  o.mode = c.gsp.formula_mode;
  return o;
}

}  // namespace lgsp::config
