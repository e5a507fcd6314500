#include "otdr/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "otdr/binary_io.hpp"
#include "otdr/error.hpp"

namespace otdr::nn {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream ss;
  ss << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
  ss << ')';
  return ss.str();
}

void expect_rank(const Tensor& x, std::size_t rank, const char* who) {
  require(x.rank() == rank && x.size() == product(x.shape), ErrorKind::Shape,
          std::string(who) + ": expected rank-" + std::to_string(rank) +
              " tensor, got " + shape_str(x.shape));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, double fill)
    : shape(std::move(shape_)), data(product(shape), fill) {}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

Param::Param(std::string name_, std::vector<std::size_t> shape_)
    : name(std::move(name_)),
      shape(std::move(shape_)),
      value(product(shape), 0.0),
      grad(value.size(), 0.0) {}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

// --- conv1d ----------------------------------------------------------------

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 int stride, int pad) {
  require(stride >= 1 && pad >= 0, ErrorKind::Shape, "conv1d: bad stride/pad");
  const long padded = static_cast<long>(length) + 2L * pad;
  require(padded >= static_cast<long>(kernel), ErrorKind::Shape,
          "conv1d: kernel larger than padded input");
  return static_cast<std::size_t>((padded - static_cast<long>(kernel)) / stride + 1);
}

namespace {

// Output positions l whose tap k reads a real (unpadded) input sample.
std::pair<long, long> tap_range(long k, long length, long out_len, int stride,
                                int pad) {
  long lo = pad - k;
  lo = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  long hi = (length - 1 + pad - k);
  hi = hi < 0 ? -1 : std::min(out_len - 1, hi / stride);
  return {lo, hi};
}

}  // namespace

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

// im2col for one batch: cols[(ci*K + k), (b*Lout + l)] = x[b, ci, l*stride + k - pad]
// (zero where the tap falls into padding).
std::vector<double> im2col(const Tensor& x, std::size_t K, std::size_t Lout,
                           int stride, int pad) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const std::size_t BL = B * Lout;
  std::vector<double> cols(Cin * K * BL, 0.0);
  for (std::size_t ci = 0; ci < Cin; ++ci) {
    for (std::size_t k = 0; k < K; ++k) {
      double* row = &cols[(ci * K + k) * BL];
      const auto [lo, hi] = tap_range(long(k), long(L), long(Lout), stride, pad);
      const long off = long(k) - pad;
      for (std::size_t b = 0; b < B; ++b) {
        const double* in = &x.data[(b * Cin + ci) * L];
        double* dst = row + b * Lout;
        for (long l = lo; l <= hi; ++l) dst[l] = in[l * stride + off];
      }
    }
  }
  return cols;
}

}  // namespace

Tensor conv1d_forward(const Tensor& x, const Param& weight, const Param& bias,
                      int stride, int pad) {
  expect_rank(x, 3, "conv1d");
  require(weight.shape.size() == 3 && bias.shape.size() == 1, ErrorKind::Shape,
          "conv1d: weight must be (Cout,Cin,K), bias (Cout)");
  const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const std::size_t Cout = weight.shape[0], K = weight.shape[2];
  require(weight.shape[1] == Cin && bias.shape[0] == Cout, ErrorKind::Shape,
          "conv1d: channel mismatch, input " + shape_str(x.shape) + " weight " +
              shape_str(weight.shape));
  const std::size_t Lout = conv1d_output_length(L, K, stride, pad);
  const std::size_t BL = B * Lout, CK = Cin * K;

  const auto cols = im2col(x, K, Lout, stride, pad);
  // out = W * cols + bias, in (Cout, B*Lout) layout.
  std::vector<double> out(Cout * BL);
  {
    MatMap o(out.data(), Cout, BL);
    o.noalias() = ConstMatMap(weight.value.data(), Cout, CK) *
                  ConstMatMap(cols.data(), CK, BL);
    o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value.data(), Cout);
  }

  Tensor y({B, Cout, Lout});
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(&out[co * BL + b * Lout], Lout, &y.data[(b * Cout + co) * Lout]);
  return y;
}

Tensor conv1d_backward(const Tensor& x, const Tensor& grad_out, Param& weight,
                       Param& bias, int stride, int pad) {
  expect_rank(x, 3, "conv1d_backward");
  expect_rank(grad_out, 3, "conv1d_backward");
  const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const std::size_t Cout = weight.shape[0], K = weight.shape[2];
  const std::size_t Lout = conv1d_output_length(L, K, stride, pad);
  require(grad_out.dim(0) == B && grad_out.dim(1) == Cout && grad_out.dim(2) == Lout,
          ErrorKind::Shape, "conv1d_backward: gradient shape mismatch");
  const std::size_t BL = B * Lout, CK = Cin * K;

  // Gradient rows in (Cout, B*Lout) layout.
  std::vector<double> g(Cout * BL);
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(&grad_out.data[(b * Cout + co) * Lout], Lout, &g[co * BL + b * Lout]);

  // Plain loop: Eigen's vectorised reductions peel by address alignment,
  // which would make the summation order depend on the allocator.
  for (std::size_t co = 0; co < Cout; ++co) {
    double acc = 0.0;
    for (std::size_t j = 0; j < BL; ++j) acc += g[co * BL + j];
    bias.grad[co] += acc;
  }

  const auto cols = im2col(x, K, Lout, stride, pad);
  std::vector<double> gcols(CK * BL);
  {
    const ConstMatMap G(g.data(), Cout, BL);
    const ConstMatMap C(cols.data(), CK, BL);
    const ConstMatMap W(weight.value.data(), Cout, CK);
    MatMap(weight.grad.data(), Cout, CK).noalias() += G * C.transpose();
    MatMap(gcols.data(), CK, BL).noalias() = W.transpose() * G;
  }

  // col2im
  Tensor gx(x.shape);
  for (std::size_t ci = 0; ci < Cin; ++ci) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* row = &gcols[(ci * K + k) * BL];
      const auto [lo, hi] = tap_range(long(k), long(L), long(Lout), stride, pad);
      const long off = long(k) - pad;
      for (std::size_t b = 0; b < B; ++b) {
        double* gin = &gx.data[(b * Cin + ci) * L];
        const double* src = row + b * Lout;
        for (long l = lo; l <= hi; ++l) gin[l * stride + off] += src[l];
      }
    }
  }
  return gx;
}

// --- pooling ---------------------------------------------------------------

PoolResult maxpool1d(const Tensor& x, int window) {
  expect_rank(x, 3, "maxpool1d");
  require(window >= 1, ErrorKind::Shape, "maxpool1d: window must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  require(static_cast<std::size_t>(window) <= L, ErrorKind::Shape,
          "maxpool1d: window larger than input length");
  const std::size_t W = window, Lout = L / W;

  PoolResult r{Tensor({B, C, Lout}), std::vector<std::size_t>(B * C * Lout)};
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t o = 0; o < Lout; ++o) {
      std::size_t best = bc * L + o * W;
      for (std::size_t i = 1; i < W; ++i) {
        const std::size_t j = bc * L + o * W + i;
        if (x.data[j] > x.data[best]) best = j;
      }
      r.out.data[bc * Lout + o] = x.data[best];
      r.argmax[bc * Lout + o] = best;
    }
  }
  return r;
}

Tensor maxpool1d_backward(const Tensor& grad_out,
                          std::span<const std::size_t> argmax,
                          const std::vector<std::size_t>& input_shape) {
  require(grad_out.size() == argmax.size(), ErrorKind::Shape,
          "maxpool1d_backward: gradient/argmax size mismatch");
  Tensor gx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gx.data[argmax[i]] += grad_out.data[i];
  return gx;
}

// --- dense -----------------------------------------------------------------

Tensor dense_forward(const Tensor& x, const Param& weight, const Param& bias) {
  expect_rank(x, 2, "dense");
  const std::size_t B = x.dim(0), In = x.dim(1), Out = weight.shape.at(0);
  require(weight.shape.size() == 2 && weight.shape[1] == In && bias.size() == Out,
          ErrorKind::Shape, "dense: input " + shape_str(x.shape) +
                                " incompatible with weight " + shape_str(weight.shape));
  Tensor y({B, Out});
  for (std::size_t b = 0; b < B; ++b) {
    const double* in = &x.data[b * In];
    for (std::size_t o = 0; o < Out; ++o) {
      const double* w = &weight.value[o * In];
      double acc = bias.value[o];
      for (std::size_t i = 0; i < In; ++i) acc += w[i] * in[i];
      y.data[b * Out + o] = acc;
    }
  }
  return y;
}

Tensor dense_backward(const Tensor& x, const Tensor& grad_out, Param& weight,
                      Param& bias) {
  expect_rank(x, 2, "dense_backward");
  const std::size_t B = x.dim(0), In = x.dim(1), Out = weight.shape.at(0);
  require(grad_out.rank() == 2 && grad_out.dim(0) == B && grad_out.dim(1) == Out,
          ErrorKind::Shape, "dense_backward: gradient shape mismatch");
  Tensor gx(x.shape);
  for (std::size_t b = 0; b < B; ++b) {
    const double* in = &x.data[b * In];
    double* gin = &gx.data[b * In];
    for (std::size_t o = 0; o < Out; ++o) {
      const double g = grad_out.data[b * Out + o];
      bias.grad[o] += g;
      const double* w = &weight.value[o * In];
      double* gw = &weight.grad[o * In];
      for (std::size_t i = 0; i < In; ++i) {
        gw[i] += g * in[i];
        gin[i] += g * w[i];
      }
    }
  }
  return gx;
}

// --- activations, dropout, losses ------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require(x.size() == grad_out.size(), ErrorKind::Shape, "relu_backward: size");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x.data[i] > 0.0)) g.data[i] = 0.0;
  return g;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng,
               std::vector<double>* mask) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::Config,
          "dropout rate must lie in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0) {
    if (mask) mask->assign(x.size(), 1.0);
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor y = x;
  if (mask) mask->resize(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double m = u(rng) >= rate ? keep_scale : 0.0;
    y.data[i] *= m;
    if (mask) (*mask)[i] = m;
  }
  return y;
}

double bce(double p, double y) {
  const double q = std::clamp(p, kBceEps, 1.0 - kBceEps);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double bce_grad_logit(double p, double y) {
  if (p < kBceEps || p > 1.0 - kBceEps) return 0.0;
  return p - y;
}

double mse(std::span<const double> prediction, std::span<const double> target) {
  require(prediction.size() == target.size(), ErrorKind::Shape,
          "mse: length mismatch");
  if (prediction.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(prediction.size());
}

// --- layers ----------------------------------------------------------------

Conv1d::Conv1d(std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, int stride, int pad, const std::string& name)
    : weight_(name + ".weight", {out_channels, in_channels, kernel}),
      bias_(name + ".bias", {out_channels}),
      stride_(stride),
      pad_(pad) {}

void Conv1d::init(Rng& rng) {
  const double fan_in = double(weight_.shape[1] * weight_.shape[2]);
  std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in),
                                           std::sqrt(6.0 / fan_in));
  for (double& w : weight_.value) w = u(rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Tensor Conv1d::forward(const Tensor& x, Mode) {
  input_ = x;
  cached_ = true;
  return conv1d_forward(x, weight_, bias_, stride_, pad_);
}

Tensor Conv1d::backward(const Tensor& grad_out) {
  require(cached_, ErrorKind::State, "conv1d backward called before forward");
  return conv1d_backward(input_, grad_out, weight_, bias_, stride_, pad_);
}

std::string Conv1d::describe() const {
  std::ostringstream ss;
  ss << "conv1d(" << weight_.shape[1] << "->" << weight_.shape[0]
     << ",k=" << weight_.shape[2] << ",s=" << stride_ << ",p=" << pad_ << ")";
  return ss.str();
}

Dense::Dense(std::size_t in, std::size_t out, const std::string& name)
    : weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {}

void Dense::init(Rng& rng, Init scheme) {
  const double fan_in = double(weight_.shape[1]);
  const double fan_out = double(weight_.shape[0]);
  const double bound = scheme == Init::He ? std::sqrt(6.0 / fan_in)
                                          : std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& w : weight_.value) w = u(rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Tensor Dense::forward(const Tensor& x, Mode) {
  input_ = x;
  cached_ = true;
  return dense_forward(x, weight_, bias_);
}

Tensor Dense::backward(const Tensor& grad_out) {
  require(cached_, ErrorKind::State, "dense backward called before forward");
  return dense_backward(input_, grad_out, weight_, bias_);
}

std::string Dense::describe() const {
  return "dense(" + std::to_string(weight_.shape[1]) + "->" +
         std::to_string(weight_.shape[0]) + ")";
}

Tensor ReLU::forward(const Tensor& x, Mode) {
  input_ = x;
  cached_ = true;
  return relu(x);
}

Tensor ReLU::backward(const Tensor& grad_out) {
  require(cached_, ErrorKind::State, "relu backward called before forward");
  return relu_backward(input_, grad_out);
}

Tensor MaxPool1d::forward(const Tensor& x, Mode) {
  auto r = maxpool1d(x, window_);
  in_shape_ = x.shape;
  argmax_ = std::move(r.argmax);
  cached_ = true;
  return std::move(r.out);
}

Tensor MaxPool1d::backward(const Tensor& grad_out) {
  require(cached_, ErrorKind::State, "maxpool backward called before forward");
  return maxpool1d_backward(grad_out, argmax_, in_shape_);
}

std::string MaxPool1d::describe() const {
  return "maxpool1d(" + std::to_string(window_) + ")";
}

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::Config,
          "dropout rate must lie in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  cached_ = true;
  identity_ = mode == Mode::Infer || rate_ == 0.0;
  if (identity_) return x;
  return dropout(x, rate_, mode, rng_, &mask_);
}

Tensor Dropout::backward(const Tensor& grad_out) {
  require(cached_, ErrorKind::State, "dropout backward called before forward");
  if (identity_) return grad_out;
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= mask_[i];
  return g;
}

Tensor Flatten::forward(const Tensor& x, Mode) {
  in_shape_ = x.shape;
  cached_ = true;
  Tensor y;
  y.shape = {x.dim(0), x.size() / x.dim(0)};
  y.data = x.data;
  return y;
}

Tensor Flatten::backward(const Tensor& grad_out) {
  require(cached_, ErrorKind::State, "flatten backward called before forward");
  Tensor g;
  g.shape = in_shape_;
  g.data = grad_out.data;
  return g;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& layer : layers_)
    for (Param* p : layer->params()) out.push_back(p);
  return out;
}

std::string Sequential::describe() const {
  std::string s;
  for (const auto& layer : layers_) s += layer->describe() + ";";
  return s;
}

// --- Adam ------------------------------------------------------------------

Adam::Adam(std::vector<Param*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const Param* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

// --- checkpoint ------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'O', 'T', 'D', 'R', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::filesystem::path& path, std::uint64_t arch_hash,
                     const std::vector<Param*>& params, Adam* optimizer) {
  io::ByteWriter w;
  for (char c : kMagic) w.put(static_cast<std::uint8_t>(c));
  w.put(kCheckpointVersion);
  w.put(arch_hash);
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    w.put(static_cast<std::uint32_t>(p->shape.size()));
    for (auto d : p->shape) w.put(static_cast<std::uint64_t>(d));
  }
  for (const Param* p : params)
    for (double v : p->value) w.put(v);
  w.put(static_cast<std::uint8_t>(optimizer ? 1 : 0));
  if (optimizer) {
    w.put(optimizer->steps());
    for (const auto& m : optimizer->first_moments())
      for (double v : m) w.put(v);
    for (const auto& m : optimizer->second_moments())
      for (double v : m) w.put(v);
  }
  io::write_file(path, w.bytes());
}

void load_checkpoint(const std::filesystem::path& path, std::uint64_t arch_hash,
                     const std::vector<Param*>& params, Adam* optimizer) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  for (char c : kMagic) {
    require(r.get<std::uint8_t>() == static_cast<std::uint8_t>(c), ErrorKind::Format,
            "not a checkpoint file: " + path.string());
  }
  const auto version = r.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Format,
          "unsupported checkpoint version " + std::to_string(version));
  require(r.get<std::uint64_t>() == arch_hash, ErrorKind::Format,
          "checkpoint architecture hash does not match the model");
  require(r.get<std::uint32_t>() == params.size(), ErrorKind::Format,
          "checkpoint tensor count mismatch");
  for (const Param* p : params) {
    const auto rank = r.get<std::uint32_t>();
    require(rank == p->shape.size(), ErrorKind::Format, "checkpoint rank mismatch");
    for (auto d : p->shape) {
      require(r.get<std::uint64_t>() == d, ErrorKind::Format,
              "checkpoint shape mismatch for " + p->name);
    }
  }
  for (Param* p : params)
    for (double& v : p->value) v = r.get<double>();
  const bool has_opt = r.get<std::uint8_t>() != 0;
  if (has_opt) {
    const auto steps = r.get<std::uint64_t>();
    if (optimizer) {
      optimizer->set_steps(steps);
      for (auto& m : optimizer->first_moments())
        for (double& v : m) v = r.get<double>();
      for (auto& m : optimizer->second_moments())
        for (double& v : m) v = r.get<double>();
    }
  }
}

}  // namespace otdr::nn
