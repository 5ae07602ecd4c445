#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dida/data.hpp"
#include "dida/model.hpp"
#include "dida/train.hpp"

namespace dida {

// ---------------------------------------------------------------------------
// INI documents: '[section]' headers, 'key = value' lines, '#'/';' comments.
// Order is preserved so an echoed config reads like the one that went in.

struct IniDoc {
  using Section = std::vector<std::pair<std::string, std::string>>;
  std::vector<std::pair<std::string, Section>> sections;

  // nullptr when the section/key pair is absent.
  const std::string* find(const std::string& section,
                          const std::string& key) const;
  // Replaces an existing key or appends (creating the section if needed).
  void set(const std::string& section, const std::string& key,
           const std::string& value);
};

IniDoc parse_ini(const std::string& text);
IniDoc load_ini(const std::string& path);
std::string serialize_ini(const IniDoc& doc);

// "section.key=value"; the first dot separates the section from the key, so
// "data.dataset.mnist.limit=100" lands in [data]. Throws ConfigError.
void apply_override(IniDoc& doc, const std::string& assignment);

// ---------------------------------------------------------------------------
// Experiment schema

// One named dataset. Either `images` (+ optional `labels`) points at IDX
// files under the data root, or `base`+`recipe` derives a synthetic domain
// from another dataset. `offset`/`limit` slice rows after loading.
struct DatasetSpec {
  std::string name;
  std::string images;
  std::string labels;
  std::string base;
  std::string recipe;
  uint64_t seed = 0;
  int64_t offset = 0;
  int64_t limit = 0;  // <= 0: everything past offset
};

struct DataConfig {
  std::string root;  // empty resolves to $DIDA_DATA_ROOT, then "data"
  std::vector<std::string> sources;
  std::string target;
  std::string eval;  // optional labeled eval set
  double mean = 0.5;
  double std_dev = 0.5;
  int64_t batch = 64;
  bool augment_source = true;
  std::map<std::string, DatasetSpec> datasets;

  std::string resolved_root() const;
  Normalizer normalizer() const { return Normalizer{mean, std_dev}; }
};

struct ExperimentConfig {
  BackboneSpec model;
  DataConfig data;
  TrainConfig train;
  std::string out_dir = "runs/out";

  // Validates everything, resolves model defaults, and rejects any unknown
  // key with a ConfigError naming "section.key".
  static ExperimentConfig from_ini(const IniDoc& doc);
  // Fully resolved echo (defaults materialized); parseable by from_ini.
  IniDoc to_ini() const;
};

// ---------------------------------------------------------------------------
// Dataset materialization with synthetic-domain caching: derived domains are
// written once as IDX pairs under <root>/_synth and reloaded on reuse (the
// file name encodes the recipe chain, so recipe edits never hit stale files).

class DatasetResolver {
 public:
  explicit DatasetResolver(const DataConfig& cfg, bool disk_cache = true);

  // Materialized dataset (labels are -1 when the spec has no label source).
  const LabeledSet& labeled(const std::string& name);

 private:
  LabeledSet build(const DatasetSpec& spec);
  std::string chain_fingerprint(const DatasetSpec& spec) const;

  const DataConfig& cfg_;
  bool disk_cache_;
  std::map<std::string, LabeledSet> loaded_;
  std::vector<std::string> stack_;  // cycle detection for base references
};

}  // namespace dida
