#include "oosdsd/nn/layers.hpp"

#include <cmath>

namespace oosdsd::nn {

using Eigen::Index;

template <typename Scalar>
Parameter<Scalar>::Parameter(std::string n, std::vector<Index> s, bool train, bool wd)
    : name(std::move(n)), shape(std::move(s)), trainable(train), decay(wd) {
  Index count = 1;
  for (Index d : shape) count *= d;
  value = Vector::Zero(count);
  grad = Vector::Zero(count);
}

template <typename Scalar>
void kaiming_uniform(Parameter<Scalar>& p, Index fan_in, Rng& rng) {
  // gain = sqrt(2 / (1 + a^2)) with a = sqrt(5); bound = gain * sqrt(3 / fan_in).
  const double bound = std::sqrt(1.0 / 3.0) * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < p.value.size(); ++i) p.value[i] = Scalar(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const std::string& prefix, Index cin, Index cout, Index kernel, Index stride,
                       bool bias)
    : cin_(cin), cout_(cout), geom_{kernel, stride, kernel / 2}, has_bias_(bias),
      weight_(prefix + ".weight", {cout, cin, kernel, kernel}, true, true),
      bias_(bias ? Parameter<Scalar>(prefix + ".bias", {cout}, true, false) : Parameter<Scalar>()) {}

template <typename Scalar>
Eigen::Map<RowMatrix<Scalar>> Conv2d<Scalar>::weight_matrix() {
  return {weight_.value.data(), cout_, cin_ * geom_.kernel * geom_.kernel};
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x, bool train) {
  if (train) input_ = x;
  const RowMatrix<Scalar> w = weight_matrix();
  return conv2d<Scalar>(x, w, has_bias_ ? &bias_.value : nullptr, geom_);
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const Tensor<Scalar>& dy, bool want_dx) {
  const RowMatrix<Scalar> w = weight_matrix();
  RowMatrix<Scalar> dw = RowMatrix<Scalar>::Zero(w.rows(), w.cols());
  auto dx = conv2d_backward<Scalar>(input_, w, dy, geom_, dw, has_bias_ ? &bias_.grad : nullptr, want_dx);
  weight_.grad += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(dw.data(), dw.size());
  input_ = Tensor<Scalar>();
  return dx;
}

template <typename Scalar>
void Conv2d<Scalar>::collect(ParamRefs<Scalar>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

template <typename Scalar>
void Conv2d<Scalar>::init(Rng& rng) {
  const Index fan_in = cin_ * geom_.kernel * geom_.kernel;
  kaiming_uniform(weight_, fan_in, rng);
  if (has_bias_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < bias_.value.size(); ++i) bias_.value[i] = Scalar(rng.uniform(-bound, bound));
  }
}

// ---------------------------------------------------------------- ConvBlock

template <typename Scalar>
ConvBlock<Scalar>::ConvBlock(const std::string& prefix, Index cin, Index cout, Index kernel, Index stride)
    : cin_(cin), cout_(cout), geom_{kernel, stride, kernel / 2},
      weight_(prefix + ".conv.weight", {cout, cin, kernel, kernel}, true, true),
      gamma_(prefix + ".bn.weight", {cout}, true, false),
      beta_(prefix + ".bn.bias", {cout}, true, false),
      running_mean_(prefix + ".bn.running_mean", {cout}, false, false),
      running_var_(prefix + ".bn.running_var", {cout}, false, false) {
  gamma_.value.setOnes();
  running_var_.value.setOnes();
}

template <typename Scalar>
Eigen::Map<RowMatrix<Scalar>> ConvBlock<Scalar>::weight_matrix() {
  return {weight_.value.data(), cout_, cin_ * geom_.kernel * geom_.kernel};
}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::forward(const Tensor<Scalar>& x, bool train) {
  const RowMatrix<Scalar> w = weight_matrix();
  Tensor<Scalar> y = conv2d<Scalar>(x, w, nullptr, geom_);
  const Index C = cout_, HW = y.spatial(), N = y.n();
  const double M = static_cast<double>(N * HW);

  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean(C), inv_std(C);
  if (train) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(C), sq = Eigen::VectorXd::Zero(C);
    for (Index n = 0; n < N; ++n) {
      const auto s = y.sample(n);
      sum += s.rowwise().sum().template cast<double>();
    }
    const Eigen::VectorXd mu = sum / M;
    for (Index n = 0; n < N; ++n) {
      const auto s = y.sample(n);
      sq += (s.template cast<double>().colwise() - mu).array().square().rowwise().sum().matrix();
    }
    const Eigen::VectorXd var = sq / M;
    mean = mu.cast<Scalar>();
    inv_std = (var.array() + kEps).rsqrt().matrix().cast<Scalar>();
    const double unbias = M > 1 ? M / (M - 1) : 1.0;
    running_mean_.value = (Scalar(1 - kMomentum) * running_mean_.value.array() +
                           Scalar(kMomentum) * mu.cast<Scalar>().array()).matrix();
    running_var_.value = (Scalar(1 - kMomentum) * running_var_.value.array() +
                          Scalar(kMomentum) * (var * unbias).cast<Scalar>().array()).matrix();
  } else {
    mean = running_mean_.value;
    inv_std = (running_var_.value.array() + Scalar(kEps)).rsqrt().matrix();
  }

  if (train) {
    xhat_ = Tensor<Scalar>(N, C, y.h(), y.w());
    input_ = x;
    inv_std_ = inv_std;
  }
  cached_train_ = train;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  const auto& gamma = gamma_.value;
  const auto& beta = beta_.value;
  for (Index n = 0; n < N; ++n) {
    auto s = y.sample(n);
    for (Index c = 0; c < C; ++c) {
      ArrayMap row(s.data() + c * HW, HW);
      const Scalar m = mean[c], is = inv_std[c], g = gamma[c], b = beta[c];
      if (train) {
        ArrayMap xh(xhat_.sample(n).data() + c * HW, HW);
        xh = (row - m) * is;
        row = g * xh + b;
      } else {
        row = g * ((row - m) * is) + b;
      }
      row = row / (Scalar(1) + (-row).exp());
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::backward(const Tensor<Scalar>& dout, bool want_dx) {
  if (!cached_train_ || input_.empty()) throw Error("ConvBlock::backward without a training forward pass");
  const Index C = cout_, HW = dout.spatial(), N = dout.n();
  const Scalar M = Scalar(N * HW);
  const auto& gamma = gamma_.value;

  // dz = dout * silu'(z), accumulated in place into a fresh tensor.
  Tensor<Scalar> dz(N, C, dout.h(), dout.w());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_dz = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(C);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_dz_xh = sum_dz;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> sig(HW);
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      ConstArrayMap go(dout.sample(n).data() + c * HW, HW);
      ConstArrayMap xh(xhat_.sample(n).data() + c * HW, HW);
      ArrayMap d(dz.sample(n).data() + c * HW, HW);
      const Scalar g = gamma[c], b = beta_.value[c];
      d = g * xh + b;  // z
      sig = Scalar(1) / (Scalar(1) + (-d).exp());
      d = go * sig * (Scalar(1) + d * (Scalar(1) - sig));
      sum_dz[c] += d.sum();
      sum_dz_xh[c] += (d * xh).sum();
    }
  gamma_.grad += sum_dz_xh;
  beta_.grad += sum_dz;

  // dy = gamma * inv_std / M * (M * dz - sum(dz) - xhat * sum(dz * xhat))
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      ArrayMap d(dz.sample(n).data() + c * HW, HW);
      ConstArrayMap xh(xhat_.sample(n).data() + c * HW, HW);
      const Scalar k = gamma[c] * inv_std_[c] / M;
      d = k * (M * d - sum_dz[c] - xh * sum_dz_xh[c]);
    }

  const RowMatrix<Scalar> w = weight_matrix();
  RowMatrix<Scalar> dw = RowMatrix<Scalar>::Zero(w.rows(), w.cols());
  auto dx = conv2d_backward<Scalar>(input_, w, dz, geom_, dw, nullptr, want_dx);
  weight_.grad += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(dw.data(), dw.size());
  input_ = Tensor<Scalar>();
  xhat_ = Tensor<Scalar>();
  return dx;
}

template <typename Scalar>
void ConvBlock<Scalar>::collect(ParamRefs<Scalar>& out) {
  out.push_back(&weight_);
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

template <typename Scalar>
void ConvBlock<Scalar>::init(Rng& rng) {
  kaiming_uniform(weight_, cin_ * geom_.kernel * geom_.kernel, rng);
  gamma_.value.setOnes();
  beta_.value.setZero();
  running_mean_.value.setZero();
  running_var_.value.setOnes();
}

// ---------------------------------------------------------------- Bottleneck

template <typename Scalar>
Bottleneck<Scalar>::Bottleneck(const std::string& prefix, Index cin, Index cout, bool shortcut)
    : cv1_(prefix + ".cv1", cin, cout, 3, 1), cv2_(prefix + ".cv2", cout, cout, 3, 1),
      add_(shortcut && cin == cout) {}

template <typename Scalar>
Tensor<Scalar> Bottleneck<Scalar>::forward(const Tensor<Scalar>& x, bool train) {
  Tensor<Scalar> y = cv2_.forward(cv1_.forward(x, train), train);
  if (add_) y.data() += x.data();
  return y;
}

template <typename Scalar>
Tensor<Scalar> Bottleneck<Scalar>::backward(const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx = cv1_.backward(cv2_.backward(dy));
  if (add_) dx.data() += dy.data();
  return dx;
}

template <typename Scalar>
void Bottleneck<Scalar>::collect(ParamRefs<Scalar>& out) {
  cv1_.collect(out);
  cv2_.collect(out);
}

template <typename Scalar>
void Bottleneck<Scalar>::init(Rng& rng) {
  cv1_.init(rng);
  cv2_.init(rng);
}

// ---------------------------------------------------------------- C2f

template <typename Scalar>
C2f<Scalar>::C2f(const std::string& prefix, Index cin, Index cout, int n, bool shortcut)
    : hidden_(cout / 2), cv1_(prefix + ".cv1", cin, 2 * (cout / 2), 1, 1),
      cv2_(prefix + ".cv2", (2 + n) * (cout / 2), cout, 1, 1) {
  if (n < 1) throw ConfigError("C2f requires at least one bottleneck");
  for (int i = 0; i < n; ++i)
    m_.emplace_back(prefix + ".m." + std::to_string(i), hidden_, hidden_, shortcut);
}

template <typename Scalar>
Tensor<Scalar> C2f<Scalar>::forward(const Tensor<Scalar>& x, bool train) {
  auto parts = split_channels(cv1_.forward(x, train), {hidden_, hidden_});
  for (auto& b : m_) parts.push_back(b.forward(parts.back(), train));
  std::vector<const Tensor<Scalar>*> refs;
  for (const auto& p : parts) refs.push_back(&p);
  return cv2_.forward(concat_channels(refs), train);
}

template <typename Scalar>
Tensor<Scalar> C2f<Scalar>::backward(const Tensor<Scalar>& dy) {
  std::vector<Index> sizes(2 + m_.size(), hidden_);
  auto grads = split_channels(cv2_.backward(dy), sizes);
  // grads[2 + i] is the direct gradient on bottleneck i's output.
  Tensor<Scalar> g = grads.back();
  for (Index i = static_cast<Index>(m_.size()) - 1; i >= 0; --i) {
    Tensor<Scalar> gin = m_[i].backward(g);
    gin.data() += grads[1 + i].data();
    g = std::move(gin);
  }
  return cv1_.backward(concat_channels<Scalar>({&grads[0], &g}));
}

template <typename Scalar>
void C2f<Scalar>::collect(ParamRefs<Scalar>& out) {
  cv1_.collect(out);
  for (auto& b : m_) b.collect(out);
  cv2_.collect(out);
}

template <typename Scalar>
void C2f<Scalar>::init(Rng& rng) {
  cv1_.init(rng);
  for (auto& b : m_) b.init(rng);
  cv2_.init(rng);
}

// ---------------------------------------------------------------- SPPF

template <typename Scalar>
SPPF<Scalar>::SPPF(const std::string& prefix, Index cin, Index cout, Index kernel)
    : hidden_(cin / 2), kernel_(kernel), cv1_(prefix + ".cv1", cin, cin / 2, 1, 1),
      cv2_(prefix + ".cv2", 4 * (cin / 2), cout, 1, 1) {}

template <typename Scalar>
Tensor<Scalar> SPPF<Scalar>::forward(const Tensor<Scalar>& x, bool train) {
  Tensor<Scalar> y0 = cv1_.forward(x, train);
  Tensor<Scalar> y1 = maxpool_same(y0, kernel_, argmax_[0]);
  Tensor<Scalar> y2 = maxpool_same(y1, kernel_, argmax_[1]);
  Tensor<Scalar> y3 = maxpool_same(y2, kernel_, argmax_[2]);
  return cv2_.forward(concat_channels<Scalar>({&y0, &y1, &y2, &y3}), train);
}

template <typename Scalar>
Tensor<Scalar> SPPF<Scalar>::backward(const Tensor<Scalar>& dy) {
  auto g = split_channels(cv2_.backward(dy), {hidden_, hidden_, hidden_, hidden_});
  Tensor<Scalar> acc = g[3];
  for (int i = 2; i >= 0; --i) {
    Tensor<Scalar> back = maxpool_same_backward(acc, argmax_[i]);
    back.data() += g[i].data();
    acc = std::move(back);
  }
  return cv1_.backward(acc);
}

template <typename Scalar>
void SPPF<Scalar>::collect(ParamRefs<Scalar>& out) {
  cv1_.collect(out);
  cv2_.collect(out);
}

template <typename Scalar>
void SPPF<Scalar>::init(Rng& rng) {
  cv1_.init(rng);
  cv2_.init(rng);
}

template struct Parameter<float>;
template struct Parameter<double>;
template void kaiming_uniform<float>(Parameter<float>&, Index, Rng&);
template void kaiming_uniform<double>(Parameter<double>&, Index, Rng&);
template class Conv2d<float>;
template class Conv2d<double>;
template class ConvBlock<float>;
template class ConvBlock<double>;
template class Bottleneck<float>;
template class Bottleneck<double>;
template class C2f<float>;
template class C2f<double>;
template class SPPF<float>;
template class SPPF<double>;

} // namespace oosdsd::nn
