#include "cada/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cada {

namespace {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

[[noreturn]] void bad(const Entry& e, const std::string& what) {
  throw ConfigParseError("config line " + std::to_string(e.line) + ": " + e.key + ": " + what,
                         e.key, e.line);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
  return out;
}

long long parse_int(const Entry& e, const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad(e, "expected an integer, got '" + s + "'");
  return v;
}

double parse_double(const Entry& e, const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad(e, "expected a number, got '" + s + "'");
  return v;
}

bool parse_bool(const Entry& e, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad(e, "expected true/false, got '" + s + "'");
}

template <typename E, std::size_t N>
E parse_enum(const Entry& e, const std::string& s, const E (&options)[N]) {
  std::string names;
  for (E o : options) {
    if (s == to_string(o)) return o;
    names += std::string(names.empty() ? "" : "|") + to_string(o);
  }
  bad(e, "expected one of " + names + ", got '" + s + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

const Variant kVariants[] = {Variant::kOriginal, Variant::kB, Variant::kD, Variant::kE};
const Stem kStems[] = {Stem::kClassic, Stem::kDeep, Stem::kDeepNoMaxPool};
const FilterKind kFilters[] = {FilterKind::kConv3x3, FilterKind::kMhDwConv, FilterKind::kCada,
                               FilterKind::kCadaSp,  FilterKind::kDa,       FilterKind::kDaSp};
const NormAct kNormActs[] = {NormAct::kDefault, NormAct::kNone, NormAct::kBn, NormAct::kRelu,
                             NormAct::kBnRelu};
const DownsampleKind kDownsamples[] = {DownsampleKind::kNone,      DownsampleKind::kIdeal,
                                       DownsampleKind::kBox,       DownsampleKind::kBinomial3,
                                       DownsampleKind::kAvgPool,   DownsampleKind::kDwConv,
                                       DownsampleKind::kCadaSp};
const DatasetKind kDatasets[] = {DatasetKind::kSynthetic, DatasetKind::kCifarBinary};

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const Entry&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

int checked_int(const Entry& e, const std::string& s) {
  const long long v = parse_int(e, s);
  if (v < -2147483647LL || v > 2147483647LL) bad(e, "integer out of range");
  return static_cast<int>(v);
}

// Per-stage key: one value broadcast to every stage, or one per stage.
template <typename Parse, typename Field>
Key stage_key(std::string name, Parse parse, Field field,
              std::function<std::string(const StageConfig&)> show) {
  Key k;
  k.name = std::move(name);
  k.set = [parse, field](ExperimentConfig& c, const Entry& e) {
    const auto items = split_list(e.value);
    auto& st = c.model.stages;
    if (items.size() != 1 && items.size() != st.size()) {
      bad(e, "expected 1 or " + std::to_string(st.size()) + " values, got " +
                 std::to_string(items.size()));
    }
    for (std::size_t i = 0; i < st.size(); ++i) {
      field(st[i]) = parse(e, items.size() == 1 ? items[0] : items[i]);
    }
  };
  k.get = [show](const ExperimentConfig& c) {
    std::string out;
    for (std::size_t i = 0; i < c.model.stages.size(); ++i) {
      if (i) out += ",";
      out += show(c.model.stages[i]);
    }
    return out;
  };
  return k;
}

#define CADA_INT_KEY(NAME, FIELD)                                                          \
  Key{NAME, [](ExperimentConfig& c, const Entry& e) { c.FIELD = checked_int(e, e.value); }, \
      [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define CADA_DOUBLE_KEY(NAME, FIELD)                                                          \
  Key{NAME, [](ExperimentConfig& c, const Entry& e) { c.FIELD = parse_double(e, e.value); }, \
      [](const ExperimentConfig& c) { return fmt_double(c.FIELD); }}
#define CADA_BOOL_KEY(NAME, FIELD)                                                          \
  Key{NAME, [](ExperimentConfig& c, const Entry& e) { c.FIELD = parse_bool(e, e.value); }, \
      [](const ExperimentConfig& c) { return fmt_bool(c.FIELD); }}
#define CADA_ENUM_KEY(NAME, FIELD, OPTIONS)                                                     \
  Key{NAME,                                                                                     \
      [](ExperimentConfig& c, const Entry& e) { c.FIELD = parse_enum(e, e.value, OPTIONS); }, \
      [](const ExperimentConfig& c) { return std::string(to_string(c.FIELD)); }}
#define CADA_STRING_KEY(NAME, FIELD)                                              \
  Key{NAME, [](ExperimentConfig& c, const Entry& e) { c.FIELD = e.value; },       \
      [](const ExperimentConfig& c) { return c.FIELD; }}

Key triple_key(std::string name, std::array<double, 3> AugmentConfig::*field) {
  return Key{std::move(name),
             [field](ExperimentConfig& c, const Entry& e) {
               const auto items = split_list(e.value);
               if (items.size() != 3) bad(e, "expected 3 comma-separated values");
               for (int i = 0; i < 3; ++i) (c.train.augment.*field)[i] = parse_double(e, items[i]);
             },
             [field](const ExperimentConfig& c) {
               const auto& a = c.train.augment.*field;
               return fmt_double(a[0]) + "," + fmt_double(a[1]) + "," + fmt_double(a[2]);
             }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    auto ip = [](const Entry& e, const std::string& s) { return checked_int(e, s); };
    auto bp = [](const Entry& e, const std::string& s) { return parse_bool(e, s); };
    std::vector<Key> k;
    k.push_back(CADA_ENUM_KEY("model.variant", model.variant, kVariants));
    k.push_back(CADA_ENUM_KEY("model.stem", model.stem, kStems));
    k.push_back(CADA_INT_KEY("model.stem_width", model.stem_width));
    k.push_back(CADA_INT_KEY("model.expansion", model.expansion));
    k.push_back(CADA_INT_KEY("model.num_classes", model.num_classes));
    k.push_back(CADA_INT_KEY("model.input_hw", model.input_hw));
    k.push_back(stage_key("model.blocks", ip, [](StageConfig& s) -> int& { return s.blocks; },
                          [](const StageConfig& s) { return std::to_string(s.blocks); }));
    k.push_back(stage_key("model.widths", ip, [](StageConfig& s) -> int& { return s.width; },
                          [](const StageConfig& s) { return std::to_string(s.width); }));
    k.push_back(stage_key("model.strides", ip, [](StageConfig& s) -> int& { return s.stride; },
                          [](const StageConfig& s) { return std::to_string(s.stride); }));
    k.push_back(stage_key(
        "model.filter",
        [](const Entry& e, const std::string& s) { return parse_enum(e, s, kFilters); },
        [](StageConfig& s) -> FilterKind& { return s.filter; },
        [](const StageConfig& s) { return std::string(to_string(s.filter)); }));
    k.push_back(stage_key("model.b", ip, [](StageConfig& s) -> int& { return s.num_bases; },
                          [](const StageConfig& s) { return std::to_string(s.num_bases); }));
    k.push_back(stage_key("model.ch", ip,
                          [](StageConfig& s) -> int& { return s.channels_per_head; },
                          [](const StageConfig& s) { return std::to_string(s.channels_per_head); }));
    k.push_back(stage_key("model.T", ip, [](StageConfig& s) -> int& { return s.ca_kernel; },
                          [](const StageConfig& s) { return std::to_string(s.ca_kernel); }));
    k.push_back(stage_key("model.G", ip, [](StageConfig& s) -> int& { return s.kernel_size; },
                          [](const StageConfig& s) { return std::to_string(s.kernel_size); }));
    k.push_back(stage_key(
        "model.norm_act",
        [](const Entry& e, const std::string& s) { return parse_enum(e, s, kNormActs); },
        [](StageConfig& s) -> NormAct& { return s.norm_act; },
        [](const StageConfig& s) { return std::string(to_string(s.norm_act)); }));
    k.push_back(stage_key("model.pos", bp, [](StageConfig& s) -> bool& { return s.pos_enabled; },
                          [](const StageConfig& s) { return fmt_bool(s.pos_enabled); }));
    k.push_back(stage_key("model.dw_bias", bp, [](StageConfig& s) -> bool& { return s.dw_bias; },
                          [](const StageConfig& s) { return fmt_bool(s.dw_bias); }));
    k.push_back(CADA_ENUM_KEY("model.downsample", model.downsample.kind, kDownsamples));
    k.push_back(CADA_INT_KEY("model.downsample_k", model.downsample.kernel));
    k.push_back(CADA_INT_KEY("model.downsample_ch", model.downsample.channels_per_head));
    k.push_back(CADA_INT_KEY("model.downsample_T", model.downsample.ca_kernel));
    k.push_back(CADA_INT_KEY("model.downsample_b", model.downsample.num_bases));

    k.push_back(CADA_DOUBLE_KEY("train.base_lr", train.base_lr));
    k.push_back(CADA_DOUBLE_KEY("train.momentum", train.momentum));
    k.push_back(CADA_DOUBLE_KEY("train.weight_decay", train.weight_decay));
    k.push_back(CADA_BOOL_KEY("train.decay_norm_and_pos", train.decay_norm_and_pos));
    k.push_back(CADA_INT_KEY("train.epochs", train.epochs));
    k.push_back(CADA_INT_KEY("train.batch_size", train.batch_size));
    k.push_back(CADA_INT_KEY("train.crop_pad", train.augment.crop_pad));
    k.push_back(CADA_BOOL_KEY("train.hflip", train.augment.hflip));
    k.push_back(CADA_BOOL_KEY("train.normalize", train.augment.normalize));
    k.push_back(triple_key("train.mean", &AugmentConfig::mean));
    k.push_back(triple_key("train.std", &AugmentConfig::std));

    k.push_back(CADA_ENUM_KEY("data.kind", data.kind, kDatasets));
    k.push_back(CADA_STRING_KEY("data.train_path", data.train_path));
    k.push_back(CADA_STRING_KEY("data.val_path", data.val_path));
    k.push_back(CADA_INT_KEY("data.classes", data.classes));
    k.push_back(CADA_INT_KEY("data.train_samples", data.train_samples));
    k.push_back(CADA_INT_KEY("data.val_samples", data.val_samples));
    k.push_back(CADA_INT_KEY("data.image_hw", data.image_hw));
    k.push_back(CADA_DOUBLE_KEY("data.noise", data.noise));

    k.push_back(Key{"run.seed",
                    [](ExperimentConfig& c, const Entry& e) {
                      std::uint64_t v = 0;
                      const auto& s = e.value;
                      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
                      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
                        bad(e, "expected an unsigned integer, got '" + s + "'");
                      }
                      c.run.seed = v;
                    },
                    [](const ExperimentConfig& c) { return std::to_string(c.run.seed); }});
    k.push_back(CADA_STRING_KEY("run.out_dir", run.out_dir));
    k.push_back(CADA_DOUBLE_KEY("prune.tolerance", prune.tolerance));
    return k;
  }();
  return table;
}

const Key* find_key(const std::string& name) {
  for (const Key& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

Entry split_assignment(const std::string& raw, int line) {
  const auto eq = raw.find('=');
  Entry e;
  e.line = line;
  if (eq == std::string::npos) {
    e.key = trim(raw);
    bad(e, "expected 'key = value'");
  }
  e.key = trim(raw.substr(0, eq));
  e.value = trim(raw.substr(eq + 1));
  if (e.key.empty()) bad(e, "missing key");
  return e;
}

void apply_entries(ExperimentConfig& cfg, const std::vector<Entry>& entries) {
  for (const Entry& e : entries) {
    if (find_key(e.key) == nullptr) bad(e, "unknown key");
  }
  // The stage count follows model.blocks; other per-stage keys are checked
  // against it.
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->key != "model.blocks") continue;
    const std::size_t n = split_list(it->value).size();
    auto& st = cfg.model.stages;
    if (n > 1 && n != st.size()) {
      const StageConfig proto = st.empty() ? StageConfig{} : st.back();
      st.resize(n, proto);
    }
    break;
  }
  for (const Entry& e : entries) find_key(e.key)->set(cfg, e);
}

void validate_all(const ExperimentConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  cfg.data.validate();
  if (cfg.prune.tolerance < 0) throw ConfigError("prune.tolerance must be non-negative");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const Key& k : keys()) n.push_back(k.name);
    return n;
  }();
  return names;
}

ExperimentConfig parse_config(const std::string& text) {
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    if (trim(raw).empty()) continue;
    entries.push_back(split_assignment(raw, line));
  }
  ExperimentConfig cfg;
  apply_entries(cfg, entries);
  validate_all(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  std::vector<Entry> entries;
  for (const auto& o : overrides) entries.push_back(split_assignment(o, 0));
  apply_entries(cfg, entries);
  validate_all(cfg);
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const Key& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace cada
