#include "oosdsd/network.hpp"

#include <algorithm>
#include <cmath>

namespace oosdsd {

using Eigen::Index;

void NetworkConfig::validate() const {
  if (!detect && !segment && !depth) throw ConfigError("network config enables no heads");
  if (depth_multiple <= 0 || width_multiple <= 0) throw ConfigError("scaling multiples must be positive");
  if (max_channels < 8) throw ConfigError("max_channels must be at least 8");
  if (reg_max < 2) throw ConfigError("reg_max must be at least 2");
  if (num_classes < 1) throw ConfigError("num_classes must be at least 1");
  if (aux_channels < 0) throw ConfigError("aux_channels must be non-negative");
}

Index scaled_channels(int channels, const NetworkConfig& cfg) {
  const double c = std::min(channels, cfg.max_channels) * cfg.width_multiple;
  return static_cast<Index>(std::ceil(c / 8.0 - 1e-9) * 8);
}

int scaled_depth(int n, const NetworkConfig& cfg) {
  return n > 1 ? std::max(static_cast<int>(std::lround(n * cfg.depth_multiple)), 1) : n;
}

int block_of(const std::string& name) {
  const auto dot = name.find('.');
  return std::stoi(name.substr(0, dot));
}

// ---------------------------------------------------------------- DetectHead

template <typename Scalar>
DetectHead<Scalar>::DetectHead(const std::string& prefix, const std::array<Index, 3>& ch, int nc, int reg_max)
    : nc_(nc), reg_max_(reg_max) {
  const Index c2 = std::max<Index>({16, ch[0] / 4, Index(reg_max) * 4});
  const Index c3 = std::max<Index>(ch[0], std::min(nc, 100));
  for (int i = 0; i < 3; ++i) {
    const std::string b = prefix + ".cv2." + std::to_string(i);
    const std::string c = prefix + ".cv3." + std::to_string(i);
    box_.push_back(Branch{nn::ConvBlock<Scalar>(b + ".0", ch[i], c2, 3, 1),
                          nn::ConvBlock<Scalar>(b + ".1", c2, c2, 3, 1),
                          nn::Conv2d<Scalar>(b + ".2", c2, Index(4) * reg_max, 1, 1, true)});
    cls_.push_back(Branch{nn::ConvBlock<Scalar>(c + ".0", ch[i], c3, 3, 1),
                          nn::ConvBlock<Scalar>(c + ".1", c3, c3, 3, 1),
                          nn::Conv2d<Scalar>(c + ".2", c3, nc, 1, 1, true)});
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> DetectHead<Scalar>::forward(const std::array<const Tensor<Scalar>*, 3>& feats,
                                                        bool train) {
  std::vector<Tensor<Scalar>> out;
  for (int i = 0; i < 3; ++i) {
    auto& bb = box_[i];
    auto& cb = cls_[i];
    Tensor<Scalar> box = bb.out.forward(bb.b.forward(bb.a.forward(*feats[i], train), train), train);
    Tensor<Scalar> cls = cb.out.forward(cb.b.forward(cb.a.forward(*feats[i], train), train), train);
    out.push_back(nn::concat_channels<Scalar>({&box, &cls}));
  }
  return out;
}

template <typename Scalar>
std::array<Tensor<Scalar>, 3> DetectHead<Scalar>::backward(const std::vector<Tensor<Scalar>>& grads) {
  std::array<Tensor<Scalar>, 3> dx;
  for (int i = 0; i < 3; ++i) {
    auto parts = nn::split_channels(grads[i], {Index(4) * reg_max_, Index(nc_)});
    auto& bb = box_[i];
    auto& cb = cls_[i];
    Tensor<Scalar> g = bb.a.backward(bb.b.backward(bb.out.backward(parts[0])));
    g.data() += cb.a.backward(cb.b.backward(cb.out.backward(parts[1]))).data();
    dx[i] = std::move(g);
  }
  return dx;
}

template <typename Scalar>
void DetectHead<Scalar>::collect(nn::ParamRefs<Scalar>& out) {
  for (int i = 0; i < 3; ++i) {
    box_[i].a.collect(out);
    box_[i].b.collect(out);
    box_[i].out.collect(out);
    cls_[i].a.collect(out);
    cls_[i].b.collect(out);
    cls_[i].out.collect(out);
  }
}

template <typename Scalar>
void DetectHead<Scalar>::init(nn::Rng& rng) {
  for (int i = 0; i < 3; ++i) {
    box_[i].a.init(rng);
    box_[i].b.init(rng);
    box_[i].out.init(rng);
    cls_[i].a.init(rng);
    cls_[i].b.init(rng);
    cls_[i].out.init(rng);
    // Prior: box logits flat, class probability ~5 objects per 640^2 image spread over cells.
    box_[i].out.bias().value.setConstant(Scalar(1));
    const double s = kDetectStrides[i];
    cls_[i].out.bias().value.setConstant(Scalar(std::log(5.0 / nc_ / std::pow(640.0 / s, 2))));
  }
}

// ---------------------------------------------------------------- Network

template <typename Scalar>
Network<Scalar>::Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto ch = [&](int c) { return scaled_channels(c, cfg_); };
  auto dp = [&](int n) { return scaled_depth(n, cfg_); };
  auto add_conv = [&](int b, Index cin, Index cout, Index k, Index s) {
    convs_.emplace(b, nn::ConvBlock<Scalar>(std::to_string(b), cin, cout, k, s));
  };
  auto add_c2f = [&](int b, Index cin, Index cout, int n, bool shortcut) {
    c2fs_.emplace(b, nn::C2f<Scalar>(std::to_string(b), cin, cout, n, shortcut));
  };

  const Index c0 = ch(64), c1 = ch(128), c3 = ch(256), c5 = ch(512), c7 = ch(1024);
  add_conv(0, 3, c0, 3, 2);
  add_conv(1, c0, c1, 3, 2);
  add_c2f(2, c1, c1, dp(3), true);
  add_conv(3, c1, c3, 3, 2);
  add_c2f(4, c3, c3, dp(6), true);
  add_conv(5, c3, c5, 3, 2);
  add_c2f(6, c5, c5, dp(6), true);
  add_conv(7, c5, c7, 3, 2);
  add_c2f(8, c7, c7, dp(3), true);
  sppf_.emplace("9", c7, c7, 5);
  c4_ = c3;
  c6_ = c5;
  c9_ = c7;
  c12_ = ch(512);
  add_c2f(12, c9_ + c6_, c12_, dp(3), false);
  c15_ = ch(256);
  add_c2f(15, c12_ + c4_, c15_, dp(3), false);
  if (cfg_.detect) {
    add_conv(16, c15_, ch(256), 3, 2);
    c18_ = ch(512);
    add_c2f(18, ch(256) + c12_, c18_, dp(3), false);
    add_conv(19, c18_, ch(512), 3, 2);
    c21_ = ch(1024);
    add_c2f(21, ch(512) + c9_, c21_, dp(3), false);
    detect_.emplace("22", std::array<Index, 3>{c15_, c18_, c21_}, cfg_.num_classes, cfg_.reg_max);
  }
  if (cfg_.any_aux()) {
    caux_ = cfg_.aux_channels > 0 ? cfg_.aux_channels : std::max<Index>(8, c15_ / 2);
    b23_.emplace("23", c15_, caux_, 3, 1);
    if (cfg_.segment) {
      b25_.emplace("25", caux_, caux_, 3, 1);
      b26a_.emplace("26.0", caux_, caux_, 3, 1);
      b26b_.emplace("26.1", caux_, 1, 1, 1, true);
    }
    if (cfg_.depth) {
      b27_.emplace("27", caux_, caux_, 3, 1);
      b28a_.emplace("28.0", caux_, caux_, 3, 1);
      b28b_.emplace("28.1", caux_, 1, 1, 1, true);
    }
  }
  init_all(seed);
}

template <typename Scalar>
void Network<Scalar>::init_block(int block, std::uint64_t seed) {
  nn::Rng rng(nn::derive_seed(seed, static_cast<std::uint64_t>(block)));
  if (auto it = convs_.find(block); it != convs_.end()) it->second.init(rng);
  if (auto it = c2fs_.find(block); it != c2fs_.end()) it->second.init(rng);
  if (block == 9) sppf_->init(rng);
  if (block == 22 && detect_) detect_->init(rng);
  if (block == 23 && b23_) b23_->init(rng);
  if (block == 25 && b25_) b25_->init(rng);
  if (block == 26 && b26a_) {
    b26a_->init(rng);
    b26b_->init(rng);
  }
  if (block == 27 && b27_) b27_->init(rng);
  if (block == 28 && b28a_) {
    b28a_->init(rng);
    b28b_->init(rng);
  }
}

template <typename Scalar>
void Network<Scalar>::init_all(std::uint64_t seed) {
  for (int b = 0; b <= 28; ++b) init_block(b, seed);
}

template <typename Scalar>
std::vector<HeadSpec> Network<Scalar>::heads() const {
  std::vector<HeadSpec> out;
  if (cfg_.detect)
    out.push_back({HeadKind::detect, {kDetectStrides.begin(), kDetectStrides.end()}, cfg_.num_classes, cfg_.reg_max});
  if (cfg_.segment) out.push_back({HeadKind::segment, {kDenseStride}, 0, 0});
  if (cfg_.depth) out.push_back({HeadKind::depth, {kDenseStride}, 0, 0});
  return out;
}

template <typename Scalar>
NetworkOutput<Scalar> Network<Scalar>::forward(const Tensor<Scalar>& x, bool train) {
  if (x.c() != 3) throw ShapeError("network input must have 3 channels, got " + x.shape_string());
  if (x.h() % 32 != 0 || x.w() % 32 != 0 || x.h() == 0 || x.w() == 0)
    throw ShapeError("network input spatial size must be divisible by 32, got " + x.shape_string());
  in_h_ = x.h();
  in_w_ = x.w();

  Tensor<Scalar> x4 = c2f(4).forward(conv(3).forward(c2f(2).forward(conv(1).forward(conv(0).forward(x, train), train), train), train), train);
  Tensor<Scalar> x6 = c2f(6).forward(conv(5).forward(x4, train), train);
  Tensor<Scalar> x9 = sppf_->forward(c2f(8).forward(conv(7).forward(x6, train), train), train);
  Tensor<Scalar> x10 = nn::upsample_nearest2x(x9);
  Tensor<Scalar> x12 = c2f(12).forward(nn::concat_channels<Scalar>({&x10, &x6}), train);
  Tensor<Scalar> x13 = nn::upsample_nearest2x(x12);
  Tensor<Scalar> x15 = c2f(15).forward(nn::concat_channels<Scalar>({&x13, &x4}), train);

  NetworkOutput<Scalar> out;
  if (cfg_.detect) {
    Tensor<Scalar> x16 = conv(16).forward(x15, train);
    Tensor<Scalar> x18 = c2f(18).forward(nn::concat_channels<Scalar>({&x16, &x12}), train);
    Tensor<Scalar> x19 = conv(19).forward(x18, train);
    Tensor<Scalar> x21 = c2f(21).forward(nn::concat_channels<Scalar>({&x19, &x9}), train);
    out.det_raw = detect_->forward({&x15, &x18, &x21}, train);
  }
  if (cfg_.any_aux()) {
    Tensor<Scalar> x24 = nn::upsample_nearest2x(b23_->forward(x15, train));
    if (cfg_.segment) {
      Tensor<Scalar> s = b26b_->forward(b26a_->forward(b25_->forward(x24, train), train), train);
      out.seg_logits = nn::resize_bilinear(s, in_h_, in_w_);
    }
    if (cfg_.depth) {
      Tensor<Scalar> d = b28b_->forward(b28a_->forward(b27_->forward(x24, train), train), train);
      out.depth_pred = nn::resize_bilinear(d, in_h_, in_w_);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::dense_backward(nn::ConvBlock<Scalar>& a, nn::ConvBlock<Scalar>& b,
                                               nn::Conv2d<Scalar>& out, const Tensor<Scalar>& g) {
  const Index h = in_h_ / kDenseStride, w = in_w_ / kDenseStride;
  return a.backward(b.backward(out.backward(nn::resize_bilinear_backward(g, h, w))));
}

template <typename Scalar>
void Network<Scalar>::backward(const NetworkGrads<Scalar>& grads) {
  Tensor<Scalar> g15, g12a, g9a;
  if (cfg_.detect) {
    if (grads.det_raw.size() != 3) throw ShapeError("detection gradients must cover three scales");
    auto gd = detect_->backward(grads.det_raw);
    auto g20 = nn::split_channels(c2f(21).backward(gd[2]), {scaled_channels(512, cfg_), c9_});
    g9a = std::move(g20[1]);
    Tensor<Scalar> g18 = std::move(gd[1]);
    g18.data() += conv(19).backward(g20[0]).data();
    auto g17 = nn::split_channels(c2f(18).backward(g18), {scaled_channels(256, cfg_), c12_});
    g12a = std::move(g17[1]);
    g15 = std::move(gd[0]);
    g15.data() += conv(16).backward(g17[0]).data();
  }
  if (cfg_.any_aux()) {
    Tensor<Scalar> g24;
    if (cfg_.segment) {
      if (grads.seg_logits.empty()) throw ShapeError("missing segmentation gradient");
      g24 = dense_backward(*b25_, *b26a_, *b26b_, grads.seg_logits);
    }
    if (cfg_.depth) {
      if (grads.depth_pred.empty()) throw ShapeError("missing depth gradient");
      Tensor<Scalar> gd = dense_backward(*b27_, *b28a_, *b28b_, grads.depth_pred);
      if (g24.empty()) g24 = std::move(gd);
      else g24.data() += gd.data();
    }
    Tensor<Scalar> g = b23_->backward(nn::upsample_nearest2x_backward(g24));
    if (g15.empty()) g15 = std::move(g);
    else g15.data() += g.data();
  }

  auto g14 = nn::split_channels(c2f(15).backward(g15), {c12_, c4_});
  Tensor<Scalar> g12 = nn::upsample_nearest2x_backward(g14[0]);
  if (!g12a.empty()) g12.data() += g12a.data();
  auto g11 = nn::split_channels(c2f(12).backward(g12), {c9_, c6_});
  Tensor<Scalar> g9 = nn::upsample_nearest2x_backward(g11[0]);
  if (!g9a.empty()) g9.data() += g9a.data();

  Tensor<Scalar> g6 = conv(7).backward(c2f(8).backward(sppf_->backward(g9)));
  g6.data() += g11[1].data();
  Tensor<Scalar> g4 = conv(5).backward(c2f(6).backward(g6));
  g4.data() += g14[1].data();
  conv(0).backward(conv(1).backward(c2f(2).backward(conv(3).backward(c2f(4).backward(g4)))), false);
}

template <typename Scalar>
nn::ParamRefs<Scalar> Network<Scalar>::parameters() {
  nn::ParamRefs<Scalar> out;
  for (int b = 0; b <= 28; ++b) {
    if (auto it = convs_.find(b); it != convs_.end()) it->second.collect(out);
    if (auto it = c2fs_.find(b); it != c2fs_.end()) it->second.collect(out);
    if (b == 9) sppf_->collect(out);
    if (b == 22 && detect_) detect_->collect(out);
    if (b == 23 && b23_) b23_->collect(out);
    if (b == 25 && b25_) b25_->collect(out);
    if (b == 26 && b26a_) {
      b26a_->collect(out);
      b26b_->collect(out);
    }
    if (b == 27 && b27_) b27_->collect(out);
    if (b == 28 && b28a_) {
      b28a_->collect(out);
      b28b_->collect(out);
    }
  }
  return out;
}

template <typename Scalar>
std::map<std::string, nn::Parameter<Scalar>*> Network<Scalar>::named_parameters() {
  std::map<std::string, nn::Parameter<Scalar>*> out;
  for (auto* p : parameters()) out.emplace(p->name, p);
  return out;
}

template <typename Scalar>
void Network<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->grad.setZero();
}

template <typename Scalar>
Index Network<Scalar>::parameter_count() {
  Index n = 0;
  for (auto* p : parameters())
    if (p->trainable) n += p->numel();
  return n;
}

template class DetectHead<float>;
template class DetectHead<double>;
template class Network<float>;
template class Network<double>;

} // namespace oosdsd
