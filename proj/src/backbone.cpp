#include "cada/backbone.hpp"

namespace cada {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kOriginal: return "original";
    case Variant::kB: return "b";
    case Variant::kD: return "d";
    case Variant::kE: return "e";
  }
  return "?";
}

const char* to_string(Stem s) {
  switch (s) {
    case Stem::kClassic: return "classic";
    case Stem::kDeep: return "deep";
    case Stem::kDeepNoMaxPool: return "deep-nomaxpool";
  }
  return "?";
}

const char* to_string(FilterKind f) {
  switch (f) {
    case FilterKind::kConv3x3: return "conv3x3";
    case FilterKind::kMhDwConv: return "mhdw";
    case FilterKind::kCada: return "cada";
    case FilterKind::kCadaSp: return "cadasp";
    case FilterKind::kDa: return "da";
    case FilterKind::kDaSp: return "dasp";
  }
  return "?";
}

const char* to_string(NormAct n) {
  switch (n) {
    case NormAct::kDefault: return "default";
    case NormAct::kNone: return "none";
    case NormAct::kBn: return "bn";
    case NormAct::kRelu: return "relu";
    case NormAct::kBnRelu: return "bn+relu";
  }
  return "?";
}

NormAct StageConfig::resolved_norm_act() const {
  if (norm_act != NormAct::kDefault) return norm_act;
  return filter == FilterKind::kConv3x3 ? NormAct::kBnRelu : NormAct::kNone;
}

namespace {

AttentionKind attention_kind(FilterKind f) {
  switch (f) {
    case FilterKind::kCada: return AttentionKind::kCada;
    case FilterKind::kCadaSp: return AttentionKind::kCadaSp;
    case FilterKind::kDa: return AttentionKind::kDa;
    default: return AttentionKind::kDaSp;
  }
}

bool is_attention(FilterKind f) {
  return f == FilterKind::kCada || f == FilterKind::kCadaSp || f == FilterKind::kDa ||
         f == FilterKind::kDaSp;
}

}  // namespace

void BackboneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (stages.empty()) fail("model: at least one stage is required");
  if (num_classes < 1) fail("model.num_classes must be positive");
  if (input_hw < 1) fail("model.input_hw must be positive");
  if (expansion < 1) fail("model.expansion must be positive");
  if (stem_width < 2 || (stem != Stem::kClassic && stem_width % 2 != 0)) {
    fail("model.stem_width must be even and at least 2 for the deep stem");
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageConfig& s = stages[i];
    const std::string where = "stage" + std::to_string(i + 1);
    if (s.blocks < 1) fail(where + ": blocks must be at least 1");
    if (s.width < 1) fail(where + ": width must be positive");
    if (s.stride != 1 && s.stride != 2) fail(where + ": stride must be 1 or 2");
    if (s.filter == FilterKind::kConv3x3) continue;
    if (s.channels_per_head < 1 || s.width % s.channels_per_head != 0) {
      fail(where + ": C_h=" + std::to_string(s.channels_per_head) + " must divide width " +
           std::to_string(s.width));
    }
    if (s.kernel_size < 1 || s.kernel_size % 2 == 0) {
      fail(where + ": G must be odd, got " + std::to_string(s.kernel_size));
    }
    if (is_attention(s.filter)) {
      if (s.ca_kernel < 1 || s.ca_kernel % 2 == 0) {
        fail(where + ": T must be odd, got " + std::to_string(s.ca_kernel));
      }
      if (s.num_bases < 1) fail(where + ": b must be at least 1");
    }
  }
  const bool has_ds = downsample.kind != DownsampleKind::kNone;
  if (variant == Variant::kE && !has_ds) {
    fail("model: variant e requires a downsampling filter (model.downsample)");
  }
  if (variant != Variant::kE && has_ds) {
    fail(std::string("model: downsampling filters are only allowed with variant e, got variant ") +
         to_string(variant));
  }
  downsample.validate("model.downsample");
}

BackboneConfig BackboneConfig::resnet50() {
  BackboneConfig c;
  const int blocks[] = {3, 4, 6, 3};
  const int widths[] = {64, 128, 256, 512};
  const int strides[] = {1, 2, 2, 2};
  for (int i = 0; i < 4; ++i) {
    StageConfig s;
    s.blocks = blocks[i];
    s.width = widths[i];
    s.stride = strides[i];
    c.stages.push_back(s);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Bottleneck

template <typename T>
Bottleneck<T>::Bottleneck(std::string name, int in, const StageConfig& stage, int stride,
                          Variant variant, int expansion)
    : Module<T>(name), main_(name + ".main") {
  const int width = stage.width;
  const int out = width * expansion;
  const bool stride_first = variant == Variant::kOriginal || variant == Variant::kE;
  const int s1 = stride_first ? stride : 1;
  const int s2 = stride_first ? 1 : stride;

  main_.template emplace<Conv2d<T>>(name + ".conv1", in, width, 1, s1, 0);
  const NormAct na = stage.resolved_norm_act();
  if (na == NormAct::kBn || na == NormAct::kBnRelu) {
    main_.template emplace<BatchNorm2d<T>>(name + ".bn1", width);
  }
  if (na == NormAct::kRelu || na == NormAct::kBnRelu) {
    main_.template emplace<ReLU<T>>(name + ".relu1");
  }
  const std::string fname = name + ".filter";
  switch (stage.filter) {
    case FilterKind::kConv3x3:
      filter_ = &main_.template emplace<Conv2d<T>>(fname, width, width, 3, s2, 1);
      break;
    case FilterKind::kMhDwConv:
      filter_ = &main_.template emplace<MhDwConv<T>>(fname, width, stage.channels_per_head,
                                                     stage.kernel_size, s2, stage.dw_bias);
      break;
    default: {
      AttentionConfig a;
      a.kind = attention_kind(stage.filter);
      a.width = width;
      a.channels_per_head = stage.channels_per_head;
      a.num_bases = stage.num_bases;
      a.ca_kernel = stage.ca_kernel;
      a.kernel_size = stage.kernel_size;
      a.stride = s2;
      a.pos_enabled = stage.pos_enabled;
      filter_ = &main_.template emplace<DecomposedAttention<T>>(fname, a);
    }
  }
  main_.template emplace<BatchNorm2d<T>>(name + ".bn2", width);
  main_.template emplace<ReLU<T>>(name + ".relu2");
  main_.template emplace<Conv2d<T>>(name + ".conv3", width, out, 1, 1, 0);
  main_.template emplace<BatchNorm2d<T>>(name + ".bn3", out);

  if (stride != 1 || in != out) {
    skip_ = std::make_unique<Sequential<T>>(name + ".skip");
    if (variant == Variant::kD && stride == 2) {
      skip_->template emplace<AvgPool2d<T>>(name + ".skip.pool", 2, 2, 0);
      skip_->template emplace<Conv2d<T>>(name + ".skip.conv", in, out, 1, 1, 0);
    } else {
      skip_->template emplace<Conv2d<T>>(name + ".skip.conv", in, out, 1, stride, 0);
    }
    skip_->template emplace<BatchNorm2d<T>>(name + ".skip.bn", out);
  }
}

namespace {

void check_skip_pool(const std::string& name, const Shape& in, bool pooled) {
  if (pooled && (in.h % 2 != 0 || in.w % 2 != 0)) {
    throw ConfigError(name + ": variant d skip pooling needs even spatial size, got " +
                      std::to_string(in.h) + "x" + std::to_string(in.w));
  }
}

}  // namespace

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, Mode mode) {
  const bool pooled = skip_ && skip_->size() == 3;
  check_skip_pool(this->name(), x.shape(), pooled);
  Tensor<T> y = main_.forward(x, mode);
  if (skip_) {
    add_into(y, skip_->forward(x, mode));
  } else {
    add_into(y, x);
  }
  sum_ = y;
  return relu(y);
}

template <typename T>
Tensor<T> Bottleneck<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T> g = relu_backward(grad_out, sum_);
  Tensor<T> gx = main_.backward(g);
  if (skip_) {
    add_into(gx, skip_->backward(g));
  } else {
    add_into(gx, g);
  }
  return gx;
}

template <typename T>
void Bottleneck<T>::visit_params(const ParamVisitor<T>& fn) {
  main_.visit_params(fn);
  if (skip_) skip_->visit_params(fn);
}

template <typename T>
void Bottleneck<T>::visit_children(const std::function<void(Module<T>&)>& fn) {
  fn(main_);
  if (skip_) fn(*skip_);
}

template <typename T>
Shape Bottleneck<T>::profile(const Shape& in, ProfileReport& report) const {
  check_skip_pool(this->name(), in, skip_ && skip_->size() == 3);
  const Shape out = main_.profile(in, report);
  const Shape s = skip_ ? skip_->profile(in, report) : in;
  if (s != out) {
    throw ConfigError(this->name() + ": residual shapes differ " + out.str() + " vs " + s.str());
  }
  return out;
}

template <typename T>
void Bottleneck<T>::reset_parameters(Rng& rng) {
  main_.reset_parameters(rng);
  if (skip_) skip_->reset_parameters(rng);
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(const BackboneConfig& cfg, bool init_params, std::uint64_t seed)
    : cfg_(cfg), net_("model") {
  cfg_.validate();
  const int sw = cfg_.stem_width;
  if (cfg_.stem == Stem::kClassic) {
    net_.template emplace<Conv2d<T>>("stem.conv1", 3, sw, 7, 2, 3);
    net_.template emplace<BatchNorm2d<T>>("stem.bn1", sw);
    net_.template emplace<ReLU<T>>("stem.relu1");
    net_.template emplace<MaxPool2d<T>>("stem.pool", 3, 2, 1);
  } else {
    const int widths[] = {sw / 2, sw / 2, sw};
    int in = 3;
    for (int i = 0; i < 3; ++i) {
      const std::string p = "stem.conv" + std::to_string(i + 1);
      net_.template emplace<Conv2d<T>>(p, in, widths[i], 3, i == 0 ? 2 : 1, 1);
      net_.template emplace<BatchNorm2d<T>>("stem.bn" + std::to_string(i + 1), widths[i]);
      net_.template emplace<ReLU<T>>("stem.relu" + std::to_string(i + 1));
      in = widths[i];
    }
    if (cfg_.stem == Stem::kDeep) net_.template emplace<MaxPool2d<T>>("stem.pool", 3, 2, 1);
  }

  int in = sw;
  for (std::size_t si = 0; si < cfg_.stages.size(); ++si) {
    const StageConfig& st = cfg_.stages[si];
    const std::string sname = "stage" + std::to_string(si + 1);
    if (st.stride == 2) {
      if (auto ds = make_downsample<T>(sname + ".downsample", cfg_.downsample, in)) {
        net_.add(std::move(ds));
      }
    }
    for (int bi = 0; bi < st.blocks; ++bi) {
      net_.template emplace<Bottleneck<T>>(sname + ".block" + std::to_string(bi), in, st,
                                           bi == 0 ? st.stride : 1, cfg_.variant, cfg_.expansion);
      in = st.width * cfg_.expansion;
    }
  }
  net_.template emplace<GlobalAvgPool<T>>("pool");
  net_.template emplace<Linear<T>>("fc", in, cfg_.num_classes);

  if (init_params) {
    Rng rng(seed);
    net_.reset_parameters(rng);
  }
}

template <typename T>
void Model<T>::set_bn_update_stats(bool on) {
  walk<T>(net_, [on](Module<T>& m) {
    if (auto* bn = dynamic_cast<BatchNorm2d<T>*>(&m)) bn->set_update_stats(on);
  });
}

template <typename T>
ProfileReport Model<T>::profile() const {
  ProfileReport r;
  net_.profile(Shape{1, 3, cfg_.input_hw, cfg_.input_hw}, r);
  return r;
}

template <typename T>
std::vector<DecomposedAttention<T>*> Model<T>::attention_layers() {
  std::vector<DecomposedAttention<T>*> out;
  walk<T>(net_, [&](Module<T>& m) {
    if (auto* a = dynamic_cast<DecomposedAttention<T>*>(&m)) out.push_back(a);
  });
  return out;
}

template <typename T>
std::vector<MhDwConv<T>*> Model<T>::depthwise_layers() {
  std::vector<MhDwConv<T>*> out;
  walk<T>(net_, [&](Module<T>& m) {
    if (auto* a = dynamic_cast<MhDwConv<T>*>(&m)) out.push_back(a);
  });
  return out;
}

template class Bottleneck<float>;
template class Bottleneck<double>;
template class Model<float>;
template class Model<double>;

}  // namespace cada
