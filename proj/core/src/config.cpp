#include "dida/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "dida/error.hpp"

namespace dida {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& where, const std::string& raw,
                            const char* wanted) {
  throw ConfigError("config: '" + where + "' = '" + raw + "' is not " +
                    wanted);
}

int64_t parse_i64(const std::string& where, const std::string& raw) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || p != raw.data() + raw.size())
    bad_value(where, raw, "an integer");
  return v;
}

uint64_t parse_u64(const std::string& where, const std::string& raw) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || p != raw.data() + raw.size())
    bad_value(where, raw, "a non-negative integer");
  return v;
}

double parse_f64(const std::string& where, const std::string& raw) {
  try {
    size_t used = 0;
    double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    bad_value(where, raw, "a number");
  }
}

bool parse_bool(const std::string& where, const std::string& raw) {
  if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "no" || raw == "off")
    return false;
  bad_value(where, raw, "a boolean (true/false)");
}

template <typename T>
std::vector<T> parse_list(const std::string& where, const std::string& raw) {
  std::vector<T> out;
  std::stringstream ss(raw);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    out.push_back(static_cast<T>(parse_i64(where, trim(tok))));
  }
  if (out.empty()) bad_value(where, raw, "a comma-separated integer list");
  return out;
}

std::vector<std::string> parse_names(const std::string& where,
                                     const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) bad_value(where, raw, "a comma-separated name list");
    out.push_back(tok);
  }
  if (out.empty()) bad_value(where, raw, "a comma-separated name list");
  return out;
}

// Pulls known keys out of a section, then complains about whatever is left.
class KeyTaker {
 public:
  KeyTaker(std::string section, const IniDoc::Section& kv)
      : section_(std::move(section)) {
    for (const auto& [k, v] : kv) {
      if (!seen_.emplace(k, v).second) {
        throw ConfigError("config: duplicate key '" + section_ + "." + k +
                          "'");
      }
      order_.push_back(k);
    }
  }

  const std::string* take(const std::string& key) {
    auto it = seen_.find(key);
    if (it == seen_.end()) return nullptr;
    taken_.insert(key);
    return &it->second;
  }

  std::string where(const std::string& key) const {
    return section_ + "." + key;
  }

  // Remaining keys may be claimed by a pattern (datasets); everything else is
  // an unknown-key error naming section.key.
  void finish(const std::function<bool(const std::string&)>& pattern =
                  nullptr) const {
    for (const auto& k : order_) {
      if (taken_.count(k)) continue;
      if (pattern && pattern(k)) continue;
      throw ConfigError("config: unknown key '" + section_ + "." + k + "'");
    }
  }

  const std::vector<std::string>& order() const { return order_; }
  const std::string& raw(const std::string& key) const {
    return seen_.at(key);
  }

 private:
  std::string section_;
  std::map<std::string, std::string> seen_;
  std::set<std::string> taken_;
  std::vector<std::string> order_;
};

}  // namespace

// ---------------------------------------------------------------------------
// IniDoc

const std::string* IniDoc::find(const std::string& section,
                                const std::string& key) const {
  for (const auto& [name, kv] : sections) {
    if (name != section) continue;
    for (const auto& [k, v] : kv) {
      if (k == key) return &v;
    }
  }
  return nullptr;
}

void IniDoc::set(const std::string& section, const std::string& key,
                 const std::string& value) {
  for (auto& [name, kv] : sections) {
    if (name != section) continue;
    for (auto& [k, v] : kv) {
      if (k == key) {
        v = value;
        return;
      }
    }
    kv.emplace_back(key, value);
    return;
  }
  sections.push_back({section, {{key, value}}});
}

IniDoc parse_ini(const std::string& text) {
  IniDoc doc;
  IniDoc::Section* cur = nullptr;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError("config: malformed section header at line " +
                          std::to_string(lineno) + ": '" + t + "'");
      }
      std::string name = trim(t.substr(1, t.size() - 2));
      for (const auto& [existing, kv] : doc.sections) {
        if (existing == name) {
          throw ConfigError("config: duplicate section '[" + name + "]'");
        }
      }
      doc.sections.push_back({name, {}});
      cur = &doc.sections.back().second;
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected 'key = value' at line " +
                        std::to_string(lineno) + ": '" + t + "'");
    }
    if (cur == nullptr) {
      throw ConfigError("config: key before any [section] at line " +
                        std::to_string(lineno));
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config: empty key at line " + std::to_string(lineno));
    }
    cur->emplace_back(std::move(key), std::move(value));
  }
  return doc;
}

IniDoc load_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_ini(buf.str());
}

std::string serialize_ini(const IniDoc& doc) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [name, kv] : doc.sections) {
    if (!first) os << "\n";
    first = false;
    os << "[" << name << "]\n";
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  }
  return os.str();
}

void apply_override(IniDoc& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment +
                      "' is not of the form section.key=value");
  }
  const std::string lhs = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto dot = lhs.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 >= lhs.size()) {
    throw ConfigError("override '" + assignment +
                      "' is not of the form section.key=value");
  }
  doc.set(lhs.substr(0, dot), lhs.substr(dot + 1), value);
}

// ---------------------------------------------------------------------------
// Schema

std::string DataConfig::resolved_root() const {
  if (!root.empty()) return root;
  if (const char* env = std::getenv("DIDA_DATA_ROOT");
      env != nullptr && *env != '\0') {
    return env;
  }
  return "data";
}

ExperimentConfig ExperimentConfig::from_ini(const IniDoc& doc) {
  ExperimentConfig cfg;
  static const std::vector<std::string> known_sections = {"model", "data",
                                                          "train", "output"};
  for (const auto& [name, kv] : doc.sections) {
    if (std::find(known_sections.begin(), known_sections.end(), name) ==
        known_sections.end()) {
      throw ConfigError("config: unknown section '[" + name + "]'");
    }
  }

  auto section = [&](const char* name) -> IniDoc::Section {
    for (const auto& [n, kv] : doc.sections) {
      if (n == name) return kv;
    }
    return {};
  };

  // [model]
  {
    KeyTaker t("model", section("model"));
    if (const auto* v = t.take("variant"))
      cfg.model.variant = variant_from_string(*v);
    if (const auto* v = t.take("num_classes"))
      cfg.model.num_classes = parse_i64(t.where("num_classes"), *v);
    if (const auto* v = t.take("in_channels"))
      cfg.model.in_channels = parse_i64(t.where("in_channels"), *v);
    if (const auto* v = t.take("channels"))
      cfg.model.channels = parse_list<int64_t>(t.where("channels"), *v);
    if (const auto* v = t.take("fc_hidden"))
      cfg.model.fc_hidden = parse_i64(t.where("fc_hidden"), *v);
    if (const auto* v = t.take("insertion")) cfg.model.insertion = *v;
    if (const auto* v = t.take("mixstyle"))
      cfg.model.mixstyle = parse_bool(t.where("mixstyle"), *v);
    if (const auto* v = t.take("mixstyle_prob"))
      cfg.model.mixstyle_opts.prob = parse_f64(t.where("mixstyle_prob"), *v);
    if (const auto* v = t.take("mixstyle_alpha"))
      cfg.model.mixstyle_opts.alpha = parse_f64(t.where("mixstyle_alpha"), *v);

    // dida_* keys stay parseable (and inert) when dida = false so a single
    // --override model.dida=false flips the ablation axis without touching
    // the rest of the file.
    bool dida_on = false;
    if (const auto* v = t.take("dida")) dida_on = parse_bool(t.where("dida"), *v);
    DidaConfig dc;
    if (const auto* v = t.take("dida_reduction"))
      dc.reduction = parse_i64(t.where("dida_reduction"), *v);
    if (const auto* v = t.take("dida_kernel"))
      dc.kernel_size = static_cast<int>(parse_i64(t.where("dida_kernel"), *v));
    if (const auto* v = t.take("dida_dilations"))
      dc.dilations = parse_list<int>(t.where("dida_dilations"), *v);
    if (const auto* v = t.take("dida_share_reduction"))
      dc.share_reduction = parse_bool(t.where("dida_share_reduction"), *v);
    if (const auto* v = t.take("dida_static_kernels"))
      dc.static_kernels = parse_bool(t.where("dida_static_kernels"), *v);
    if (dida_on) cfg.model.dida = dc;
    t.finish();
  }

  // [data]
  {
    KeyTaker t("data", section("data"));
    if (const auto* v = t.take("root")) cfg.data.root = *v;
    if (const auto* v = t.take("source"))
      cfg.data.sources = parse_names(t.where("source"), *v);
    if (const auto* v = t.take("target")) cfg.data.target = *v;
    if (const auto* v = t.take("eval")) cfg.data.eval = *v;
    if (const auto* v = t.take("mean"))
      cfg.data.mean = parse_f64(t.where("mean"), *v);
    if (const auto* v = t.take("std"))
      cfg.data.std_dev = parse_f64(t.where("std"), *v);
    if (const auto* v = t.take("batch"))
      cfg.data.batch = parse_i64(t.where("batch"), *v);
    if (const auto* v = t.take("augment_source"))
      cfg.data.augment_source = parse_bool(t.where("augment_source"), *v);

    static const std::set<std::string> dataset_fields = {
        "images", "labels", "base", "recipe", "seed", "limit", "offset"};
    auto dataset_pattern = [&](const std::string& key) {
      if (key.rfind("dataset.", 0) != 0) return false;
      const std::string rest = key.substr(8);
      const auto dot = rest.find('.');
      if (dot == std::string::npos || dot == 0 || dot + 1 >= rest.size())
        return false;
      const std::string name = rest.substr(0, dot);
      const std::string field = rest.substr(dot + 1);
      if (!dataset_fields.count(field)) return false;
      DatasetSpec& spec = cfg.data.datasets[name];
      spec.name = name;
      const std::string& raw = t.raw(key);
      const std::string where = "data." + key;
      if (field == "images") spec.images = raw;
      else if (field == "labels") spec.labels = raw;
      else if (field == "base") spec.base = raw;
      else if (field == "recipe") spec.recipe = raw;
      else if (field == "seed") spec.seed = parse_u64(where, raw);
      else if (field == "limit") spec.limit = parse_i64(where, raw);
      else if (field == "offset") spec.offset = parse_i64(where, raw);
      return true;
    };
    t.finish(dataset_pattern);

    if (!(cfg.data.std_dev > 0.0))
      throw ConfigError("config: data.std must be positive");
    if (cfg.data.batch < 1)
      throw ConfigError("config: data.batch must be >= 1");
    for (const auto& [name, spec] : cfg.data.datasets) {
      const std::string where = "data.dataset." + name;
      const bool has_images = !spec.images.empty();
      const bool has_base = !spec.base.empty();
      if (has_images == has_base) {
        throw ConfigError("config: " + where +
                          " needs exactly one of .images or .base");
      }
      if (has_images && !spec.recipe.empty()) {
        throw ConfigError("config: " + where +
                          ".recipe only applies to synthetic (.base) sets");
      }
      if (has_base && spec.recipe.empty()) {
        throw ConfigError("config: " + where + ".base needs a .recipe");
      }
      if (has_base && !spec.labels.empty()) {
        throw ConfigError("config: " + where +
                          ".labels only applies to .images sets");
      }
      if (spec.offset < 0) {
        throw ConfigError("config: " + where + ".offset must be >= 0");
      }
    }
    auto check_ref = [&](const std::string& name, const char* role) {
      if (!name.empty() && !cfg.data.datasets.count(name)) {
        throw ConfigError("config: data." + std::string(role) +
                          " references undefined dataset '" + name + "'");
      }
    };
    for (const auto& s : cfg.data.sources) check_ref(s, "source");
    check_ref(cfg.data.target, "target");
    check_ref(cfg.data.eval, "eval");
  }

  // [train]
  {
    KeyTaker t("train", section("train"));
    if (const auto* v = t.take("epochs"))
      cfg.train.epochs = parse_i64(t.where("epochs"), *v);
    if (const auto* v = t.take("lr"))
      cfg.train.base_lr = parse_f64(t.where("lr"), *v);
    if (const auto* v = t.take("optimizer")) {
      if (*v == "adam") cfg.train.optimizer = OptKind::kAdam;
      else if (*v == "sgd") cfg.train.optimizer = OptKind::kSgdMomentum;
      else bad_value(t.where("optimizer"), *v, "one of adam, sgd");
    }
    if (const auto* v = t.take("momentum"))
      cfg.train.opt.momentum = parse_f64(t.where("momentum"), *v);
    if (const auto* v = t.take("cosine"))
      cfg.train.cosine_schedule = parse_bool(t.where("cosine"), *v);
    if (const auto* v = t.take("tau"))
      cfg.train.tau = parse_f64(t.where("tau"), *v);
    if (const auto* v = t.take("target_mode"))
      cfg.train.target_mode = target_mode_from_string(*v);
    if (const auto* v = t.take("dida_lr_multiplier"))
      cfg.train.dida_lr_multiplier =
          parse_f64(t.where("dida_lr_multiplier"), *v);
    if (const auto* v = t.take("warmup_steps"))
      cfg.train.warmup_steps = parse_i64(t.where("warmup_steps"), *v);
    if (const auto* v = t.take("eval_batch"))
      cfg.train.eval_batch = parse_i64(t.where("eval_batch"), *v);
    if (const auto* v = t.take("seed"))
      cfg.train.seed = parse_u64(t.where("seed"), *v);
    if (const auto* v = t.take("best_by")) {
      if (*v == "target_acc") cfg.train.best_by_target_acc = true;
      else if (*v == "final") cfg.train.best_by_target_acc = false;
      else bad_value(t.where("best_by"), *v, "one of target_acc, final");
    }
    t.finish();
    cfg.train.validate();
  }

  // [output]
  {
    KeyTaker t("output", section("output"));
    if (const auto* v = t.take("dir")) cfg.out_dir = *v;
    t.finish();
    if (cfg.out_dir.empty())
      throw ConfigError("config: output.dir must not be empty");
  }

  cfg.model.resolve();
  return cfg;
}

IniDoc ExperimentConfig::to_ini() const {
  IniDoc doc;
  doc.set("model", "variant", variant_name(model.variant));
  doc.set("model", "num_classes", std::to_string(model.num_classes));
  doc.set("model", "in_channels", std::to_string(model.in_channels));
  doc.set("model", "channels", join(model.channels));
  doc.set("model", "fc_hidden", std::to_string(model.fc_hidden));
  doc.set("model", "insertion", model.insertion);
  doc.set("model", "mixstyle", fmt_bool(model.mixstyle));
  doc.set("model", "mixstyle_prob", fmt_double(model.mixstyle_opts.prob));
  doc.set("model", "mixstyle_alpha", fmt_double(model.mixstyle_opts.alpha));
  doc.set("model", "dida", fmt_bool(model.dida.has_value()));
  if (model.dida) {
    doc.set("model", "dida_reduction", std::to_string(model.dida->reduction));
    doc.set("model", "dida_kernel", std::to_string(model.dida->kernel_size));
    doc.set("model", "dida_dilations", join(model.dida->dilations));
    doc.set("model", "dida_share_reduction",
            fmt_bool(model.dida->share_reduction));
    doc.set("model", "dida_static_kernels",
            fmt_bool(model.dida->static_kernels));
  }

  doc.set("data", "root", data.resolved_root());
  if (!data.sources.empty()) doc.set("data", "source", join(data.sources));
  if (!data.target.empty()) doc.set("data", "target", data.target);
  if (!data.eval.empty()) doc.set("data", "eval", data.eval);
  doc.set("data", "mean", fmt_double(data.mean));
  doc.set("data", "std", fmt_double(data.std_dev));
  doc.set("data", "batch", std::to_string(data.batch));
  doc.set("data", "augment_source", fmt_bool(data.augment_source));
  for (const auto& [name, spec] : data.datasets) {
    const std::string prefix = "dataset." + name + ".";
    if (!spec.images.empty()) doc.set("data", prefix + "images", spec.images);
    if (!spec.labels.empty()) doc.set("data", prefix + "labels", spec.labels);
    if (!spec.base.empty()) {
      doc.set("data", prefix + "base", spec.base);
      doc.set("data", prefix + "recipe", spec.recipe);
      doc.set("data", prefix + "seed", std::to_string(spec.seed));
    }
    if (spec.offset != 0)
      doc.set("data", prefix + "offset", std::to_string(spec.offset));
    if (spec.limit != 0)
      doc.set("data", prefix + "limit", std::to_string(spec.limit));
  }

  doc.set("train", "epochs", std::to_string(train.epochs));
  doc.set("train", "lr", fmt_double(train.base_lr));
  doc.set("train", "optimizer",
          train.optimizer == OptKind::kAdam ? "adam" : "sgd");
  doc.set("train", "momentum", fmt_double(train.opt.momentum));
  doc.set("train", "cosine", fmt_bool(train.cosine_schedule));
  doc.set("train", "tau", fmt_double(train.tau));
  doc.set("train", "target_mode", target_mode_name(train.target_mode));
  doc.set("train", "dida_lr_multiplier", fmt_double(train.dida_lr_multiplier));
  doc.set("train", "warmup_steps", std::to_string(train.warmup_steps));
  doc.set("train", "eval_batch", std::to_string(train.eval_batch));
  doc.set("train", "seed", std::to_string(train.seed));
  doc.set("train", "best_by",
          train.best_by_target_acc ? "target_acc" : "final");

  doc.set("output", "dir", out_dir);
  return doc;
}

// ---------------------------------------------------------------------------
// Dataset materialization

DatasetResolver::DatasetResolver(const DataConfig& cfg, bool disk_cache)
    : cfg_(cfg), disk_cache_(disk_cache) {}

const LabeledSet& DatasetResolver::labeled(const std::string& name) {
  if (auto it = loaded_.find(name); it != loaded_.end()) return it->second;
  auto spec_it = cfg_.datasets.find(name);
  if (spec_it == cfg_.datasets.end()) {
    throw ConfigError("config: unknown dataset '" + name + "'");
  }
  if (std::find(stack_.begin(), stack_.end(), name) != stack_.end()) {
    std::string chain;
    for (const auto& s : stack_) chain += s + " -> ";
    throw ConfigError("config: dataset cycle: " + chain + name);
  }
  stack_.push_back(name);
  LabeledSet s = build(spec_it->second);
  stack_.pop_back();

  const DatasetSpec& spec = spec_it->second;
  if (spec.offset > 0 || spec.limit > 0) {
    s = subset(s, spec.offset, spec.limit);
  }
  s.domain = name;
  return loaded_.emplace(name, std::move(s)).first->second;
}

std::string DatasetResolver::chain_fingerprint(const DatasetSpec& spec) const {
  std::string descr;
  std::function<void(const DatasetSpec&)> emit = [&](const DatasetSpec& s) {
    descr += s.name + "|" + s.images + "|" + s.labels + "|" + s.recipe + "|" +
             std::to_string(s.seed) + "|" + std::to_string(s.offset) + "|" +
             std::to_string(s.limit) + ";";
    if (!s.base.empty()) {
      auto it = cfg_.datasets.find(s.base);
      if (it != cfg_.datasets.end()) emit(it->second);
    }
  };
  emit(spec);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016zx", std::hash<std::string>{}(descr));
  return buf;
}

LabeledSet DatasetResolver::build(const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  const fs::path root = cfg_.resolved_root();

  if (!spec.images.empty()) {
    const fs::path img = root / spec.images;
    if (spec.labels.empty()) {
      IdxImages raw = load_idx_images(img.string());
      LabeledSet s;
      s.domain = spec.name;
      s.count = raw.count;
      s.h = raw.rows;
      s.w = raw.cols;
      s.images = std::move(raw.data);
      s.labels.assign(static_cast<size_t>(s.count), -1);
      return s;
    }
    const fs::path lbl = root / spec.labels;
    return load_labeled(img.string(), lbl.string(), spec.name);
  }

  // Synthetic: derive from base, with an IDX disk cache keyed by the full
  // derivation chain.
  const LabeledSet& base = labeled(spec.base);
  fs::path cache_img, cache_lbl;
  const bool cacheable =
      disk_cache_ &&
      std::all_of(base.labels.begin(), base.labels.end(),
                  [](int l) { return l >= 0 && l < 256; });
  if (cacheable) {
    const std::string fp = chain_fingerprint(spec);
    const fs::path dir = root / "_synth";
    cache_img = dir / (spec.name + "-" + fp + "-images.idx");
    cache_lbl = dir / (spec.name + "-" + fp + "-labels.idx");
    if (fs::exists(cache_img) && fs::exists(cache_lbl)) {
      return load_labeled(cache_img.string(), cache_lbl.string(), spec.name);
    }
  }

  LabeledSet s = make_synthetic_domain(base, spec.recipe, spec.seed);
  s.domain = spec.name;

  if (cacheable) {
    try {
      fs::create_directories(cache_img.parent_path());
      IdxImages imgs;
      imgs.count = s.count;
      imgs.rows = s.h;
      imgs.cols = s.w;
      imgs.data = s.images;
      save_idx_images(cache_img.string(), imgs);
      std::vector<uint8_t> lbls(s.labels.begin(), s.labels.end());
      save_idx_labels(cache_lbl.string(), lbls);
    } catch (const IoError&) {
      // The cache is an optimization; an unwritable root is not an error.
    }
  }
  return s;
}

}  // namespace dida
