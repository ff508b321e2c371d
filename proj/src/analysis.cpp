#include "cada/analysis.hpp"

#include <cctype>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cada {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void check_written(const std::ofstream& f, const std::filesystem::path& path) {
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------

void write_profile_csv(const ProfileReport& r, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "layer,params,flops\n";
  for (const auto& row : r.rows) f << row.name << ',' << row.params << ',' << row.flops << '\n';
  f << "total," << r.total_params() << ',' << r.total_flops() << '\n';
  check_written(f, path);
}

std::string profile_table(const ProfileReport& r) {
  std::size_t width = 5;
  for (const auto& row : r.rows) width = std::max(width, row.name.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %14s %16s\n", static_cast<int>(width), "layer", "params", "flops");
  out << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %14lld %16lld\n", static_cast<int>(width), row.name.c_str(),
                  static_cast<long long>(row.params), static_cast<long long>(row.flops));
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %14lld %16lld\n", static_cast<int>(width), "total",
                static_cast<long long>(r.total_params()), static_cast<long long>(r.total_flops()));
  out << buf;
  return out.str();
}

ProfileReport profile(const BackboneConfig& cfg) {
  const Model<float> m(cfg, false);
  return m.profile();
}

// ---------------------------------------------------------------------------

double PruneLayer::mean_survivors() const {
  if (survivors.empty()) return 0.0;
  double s = 0.0;
  for (int v : survivors) s += v;
  return s / static_cast<double>(survivors.size());
}

int PruneReport::total_survivors() const {
  int s = 0;
  for (const auto& l : layers) {
    for (int v : l.survivors) s += v;
  }
  return s;
}

namespace {

struct KernelRef {
  std::size_t layer;
  int head;
  int base;
  double l1;
};

template <typename T>
bool kernel_is_zero(const BaseKernelBank<T>& bank, int h, int i) {
  for (int t = 0; t < bank.taps(); ++t) {
    if (bank.base_tap(h, i, t) != T(0)) return false;
  }
  return true;
}

}  // namespace

template <typename T>
PruneReport l1_prune(Model<T>& model, const Dataset& val, const AugmentConfig& aug,
                     int batch_size, double tolerance) {
  if (val.size() == 0) throw ConfigError("l1_prune: empty validation set");
  if (tolerance < 0) throw ConfigError("l1_prune: tolerance must be non-negative");
  auto layers = model.attention_layers();
  if (layers.empty()) throw ConfigError("l1_prune: model has no base-kernel banks");

  std::vector<KernelRef> order;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto bank = layers[l]->bank();
    for (int h = 0; h < bank.heads(); ++h) {
      for (int i = 0; i < bank.num_bases(); ++i) {
        double s = 0.0;
        for (int t = 0; t < bank.taps(); ++t) s += std::abs(static_cast<double>(bank.base_tap(h, i, t)));
        order.push_back({l, h, i, s});
      }
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const KernelRef& a, const KernelRef& b) { return a.l1 < b.l1; });

  PruneReport rep;
  rep.tolerance = tolerance;
  rep.accuracy_before = evaluate(model, val, aug, batch_size);
  rep.accuracy_after = rep.accuracy_before;
  // Accuracies are multiples of 1/|val|; the slack absorbs rounding in the
  // subtraction so a drop exactly equal to the tolerance is allowed.
  constexpr double kSlack = 1e-12;
  for (const KernelRef& k : order) {
    auto bank = layers[k.layer]->bank();
    const auto saved = bank.base_kernel(k.head, k.base);
    bank.zero_base(k.head, k.base);
    const double acc = evaluate(model, val, aug, batch_size);
    if (rep.accuracy_before - acc > tolerance + kSlack) {
      bank.set_base_kernel(k.head, k.base, saved);
      break;
    }
    rep.accuracy_after = acc;
    ++rep.removed;
  }

  for (auto* layer : layers) {
    const auto bank = layer->bank();
    PruneLayer pl;
    pl.layer = layer->name();
    pl.num_bases = bank.num_bases();
    for (int h = 0; h < bank.heads(); ++h) {
      int alive = 0;
      for (int i = 0; i < bank.num_bases(); ++i) alive += !kernel_is_zero(bank, h, i);
      pl.survivors.push_back(alive);
    }
    rep.layers.push_back(std::move(pl));
  }
  return rep;
}

void write_prune_csv(const PruneReport& r, const std::filesystem::path& path) {
  auto f = open_out(path);
  char buf[160];
  std::snprintf(buf, sizeof buf, "# tolerance=%.9g accuracy_before=%.9g accuracy_after=%.9g removed=%d\n",
                r.tolerance, r.accuracy_before, r.accuracy_after, r.removed);
  f << buf;
  f << "layer,head,survivors,b\n";
  for (const auto& l : r.layers) {
    for (std::size_t h = 0; h < l.survivors.size(); ++h) {
      f << l.layer << ',' << h << ',' << l.survivors[h] << ',' << l.num_bases << '\n';
    }
  }
  check_written(f, path);
}

// ---------------------------------------------------------------------------

Correlation pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ConfigError("pearson: operands must match and be non-empty");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, true};
  return {sab / std::sqrt(saa * sbb), false};
}

template <typename T>
std::vector<HeadCorrelation> kernel_correlation(const BaseKernelBank<T>& bank) {
  std::vector<HeadCorrelation> out;
  for (int h = 0; h < bank.heads(); ++h) {
    HeadCorrelation hc;
    hc.b = bank.num_bases();
    std::vector<std::vector<double>> k(hc.b);
    for (int i = 0; i < hc.b; ++i) {
      const auto v = bank.base_kernel(h, i);
      k[i].assign(v.begin(), v.end());
    }
    const auto pv = bank.pos_kernel(h);
    const std::vector<double> pos(pv.begin(), pv.end());
    for (int i = 0; i < hc.b; ++i) {
      for (int j = 0; j < hc.b; ++j) hc.pairwise.push_back(pearson(k[i], k[j]));
      hc.with_pos.push_back(pearson(k[i], pos));
    }
    out.push_back(std::move(hc));
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_spectrum_csv(const Spectrum& s, const std::filesystem::path& path) {
  auto f = open_out(path);
  char buf[40];
  for (int y = 0; y < s.grid; ++y) {
    for (int x = 0; x < s.grid; ++x) {
      std::snprintf(buf, sizeof buf, "%.17g", s.at(y, x));
      f << (x ? "," : "") << buf;
    }
    f << '\n';
  }
  check_written(f, path);
}

Spectrum read_spectrum_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  Spectrum s;
  std::string line;
  int rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) s.magnitude.push_back(std::stod(cell));
    ++rows;
  }
  s.grid = rows;
  if (static_cast<std::size_t>(rows) * rows != s.magnitude.size()) {
    throw IoError("spectrum " + path.string() + " is not square");
  }
  s.degenerate = std::all_of(s.magnitude.begin(), s.magnitude.end(), [](double v) { return v == 0.0; });
  return s;
}

void write_spectrum_pgm(const Spectrum& s, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "P5\n" << s.grid << ' ' << s.grid << "\n255\n";
  for (double m : s.magnitude) {
    const double c = std::clamp(m, 0.0, 1.0);
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  check_written(f, path);
}

namespace {

std::string file_stem(const std::string& name) {
  std::string s = name;
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-') c = '_';
  }
  return s;
}

}  // namespace

template <typename T>
std::vector<SpectrumExport> export_spectra(Model<T>& model, const std::filesystem::path& out_dir,
                                           int grid) {
  struct Item {
    std::string name;
    std::vector<double> kernel;
    int size;
  };
  std::vector<Item> items;
  for (auto* dw : model.depthwise_layers()) {
    const auto& w = dw->weight().value;
    const int g = w.h();
    for (int h = 0; h < w.n(); ++h) {
      const T* p = w.plane(h, 0);
      items.push_back({dw->name() + ".h" + std::to_string(h),
                       std::vector<double>(p, p + static_cast<std::size_t>(g) * g), g});
    }
  }
  for (auto* a : model.attention_layers()) {
    const auto bank = a->bank();
    for (int h = 0; h < bank.heads(); ++h) {
      if (bank.pos_enabled()) {
        const auto v = bank.pos_kernel(h);
        items.push_back({a->name() + ".h" + std::to_string(h) + ".pos",
                         std::vector<double>(v.begin(), v.end()), bank.kernel_size()});
      }
      for (int i = 0; i < bank.num_bases(); ++i) {
        const auto v = bank.base_kernel(h, i);
        items.push_back({a->name() + ".h" + std::to_string(h) + ".k" + std::to_string(i),
                         std::vector<double>(v.begin(), v.end()), bank.kernel_size()});
      }
    }
  }
  if (items.empty()) throw ConfigError("export_spectra: model has no depthwise or attention kernels");

  std::filesystem::create_directories(out_dir);
  std::vector<SpectrumExport> out;
  for (const auto& it : items) {
    const Spectrum s = spectrum(it.kernel, it.size, std::max(grid, it.size));
    SpectrumExport e{it.name, out_dir / (file_stem(it.name) + ".csv"),
                     out_dir / (file_stem(it.name) + ".pgm"), s.degenerate};
    write_spectrum_csv(s, e.csv);
    write_spectrum_pgm(s, e.pgm);
    out.push_back(std::move(e));
  }
  const auto index = out_dir / "spectra.csv";
  auto f = open_out(index);
  f << "kernel,csv,pgm,degenerate\n";
  for (const auto& e : out) {
    f << e.kernel << ',' << e.csv.filename().string() << ',' << e.pgm.filename().string() << ','
      << (e.degenerate ? 1 : 0) << '\n';
  }
  check_written(f, index);
  return out;
}

template PruneReport l1_prune<float>(Model<float>&, const Dataset&, const AugmentConfig&, int, double);
template PruneReport l1_prune<double>(Model<double>&, const Dataset&, const AugmentConfig&, int, double);
template std::vector<HeadCorrelation> kernel_correlation<float>(const BaseKernelBank<float>&);
template std::vector<HeadCorrelation> kernel_correlation<double>(const BaseKernelBank<double>&);
template std::vector<SpectrumExport> export_spectra<float>(Model<float>&, const std::filesystem::path&, int);
template std::vector<SpectrumExport> export_spectra<double>(Model<double>&, const std::filesystem::path&, int);

}  // namespace cada
