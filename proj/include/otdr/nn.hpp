#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "otdr/rng.hpp"

// Small from-scratch network kernels with analytic gradients. Tensors are
// row-major float64, either (batch, channels, length) or (batch, features).
namespace otdr::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  bool all_finite() const;
};

enum class Mode { Train, Infer };

struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string name_, std::vector<std::size_t> shape_);
  std::size_t size() const { return value.size(); }
  void zero_grad();
};

// --- kernels ---------------------------------------------------------------

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 int stride, int pad);

/// Cross-correlation. x: (B, Cin, L), weight: (Cout, Cin, K), bias: (Cout).
Tensor conv1d_forward(const Tensor& x, const Param& weight, const Param& bias,
                      int stride, int pad);
/// Accumulates into weight.grad / bias.grad and returns dL/dx.
Tensor conv1d_backward(const Tensor& x, const Tensor& grad_out, Param& weight,
                       Param& bias, int stride, int pad);

struct PoolResult {
  Tensor out;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Non-overlapping max pooling (stride = window); ties go to the lowest index.
PoolResult maxpool1d(const Tensor& x, int window);
Tensor maxpool1d_backward(const Tensor& grad_out,
                          std::span<const std::size_t> argmax,
                          const std::vector<std::size_t>& input_shape);

/// x: (B, in), weight: (out, in), bias: (out).
Tensor dense_forward(const Tensor& x, const Param& weight, const Param& bias);
Tensor dense_backward(const Tensor& x, const Tensor& grad_out, Param& weight,
                      Param& bias);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);
double sigmoid(double z);

/// Inverted dropout. Returns the mask (0 or 1/(1-rate)) through `mask`.
Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng,
               std::vector<double>* mask = nullptr);

inline constexpr double kBceEps = 1e-7;
/// Binary cross-entropy with p clamped to [eps, 1-eps].
double bce(double p, double y);
/// d bce / d logit for p = sigmoid(logit); zero where the clamp is active.
double bce_grad_logit(double p, double y);
double mse(std::span<const double> prediction, std::span<const double> target);

// --- layers ----------------------------------------------------------------

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  virtual std::string describe() const = 0;
};

class Conv1d final : public Layer {
 public:
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         int stride, int pad, const std::string& name);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::string describe() const override;

 private:
  Param weight_, bias_;
  int stride_, pad_;
  Tensor input_;
  bool cached_ = false;
};

class Dense final : public Layer {
 public:
  enum class Init { He, Glorot };
  Dense(std::size_t in, std::size_t out, const std::string& name);
  void init(Rng& rng, Init scheme);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::string describe() const override;

 private:
  Param weight_, bias_;
  Tensor input_;
  bool cached_ = false;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override { return "relu"; }

 private:
  Tensor input_;
  bool cached_ = false;
};

class MaxPool1d final : public Layer {
 public:
  explicit MaxPool1d(int window) : window_(window) {}
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override;

 private:
  int window_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
  bool cached_ = false;
};

class Dropout final : public Layer {
 public:
  Dropout(double rate, std::uint64_t seed);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override { return "dropout"; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  double rate_;
  Rng rng_;
  std::vector<double> mask_;
  bool cached_ = false;
  bool identity_ = true;
};

class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override { return "flatten"; }

 private:
  std::vector<std::size_t> in_shape_;
  bool cached_ = false;
};

class Sequential {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  std::vector<Param*> params();
  std::string describe() const;
  std::size_t size() const { return layers_.size(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// --- optimizer -------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg = {});
  void step();
  void zero_grad();

  std::uint64_t steps() const { return step_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(std::uint64_t s) { step_ = s; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

// --- checkpoint ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Header, parameters (float64, declaration order), Adam moments.
void save_checkpoint(const std::filesystem::path& path, std::uint64_t arch_hash,
                     const std::vector<Param*>& params, Adam* optimizer);
/// Verifies the architecture hash and every tensor shape before loading.
void load_checkpoint(const std::filesystem::path& path, std::uint64_t arch_hash,
                     const std::vector<Param*>& params, Adam* optimizer);

}  // namespace otdr::nn
