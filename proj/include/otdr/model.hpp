#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "otdr/dataset.hpp"
#include "otdr/nn.hpp"

namespace otdr::model {

struct ModelConfig {
  std::array<int, 4> conv_filters{64, 32, 32, 16};
  int head_hidden = 16;
  std::array<double, 3> loss_weights{0.33, 0.33, 0.33};
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int pool = 2;
  double dropout = 0.0;
  double lr = 1e-3;
  double lr_decay = 0.95;  // per-epoch multiplicative factor
  int batch_size = 64;
  int max_epochs = 40;
  int patience = 8;
  std::uint64_t seed = 1;
  // Regression target scaling: position / (window - 1), reflectance min-max.
  std::array<double, 2> reflectance_range{-45.0, -5.0};

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Prediction {
  double p_event = 0.0;
  double logit = 0.0;
  double position_idx_hat = 0.0;
  double reflectance_db_hat = 0.0;
};

/// Raw head outputs; regressions are in normalised target units.
struct HeadOutputs {
  std::vector<double> logit, position, reflectance;
  std::size_t size() const { return logit.size(); }
};

struct Labels {
  std::vector<std::uint8_t> cls;
  std::vector<double> position, reflectance;  // normalised; unused for class 0
  std::size_t size() const { return cls.size(); }
};

struct LossBreakdown {
  double total = 0.0;
  double bce = 0.0;
  double mse_position = 0.0;
  double mse_reflectance = 0.0;
  std::size_t n = 0;
  std::size_t n_pos = 0;
};

/// dLoss/d(head output), same layout as HeadOutputs.
using LossGrads = HeadOutputs;

/// lambda1 * BCE + lambda2 * MSE(position) + lambda3 * MSE(reflectance),
/// regressions masked to class-1 samples and averaged over those only.
LossBreakdown total_loss(const HeadOutputs& out, const Labels& labels,
                         const std::array<double, 3>& lambda,
                         LossGrads* grads = nullptr);

class MultiTaskNet {
 public:
  explicit MultiTaskNet(const ModelConfig& cfg);

  HeadOutputs forward(const nn::Tensor& x, nn::Mode mode);
  void backward(const LossGrads& grads);

  std::vector<nn::Param*> params();
  std::size_t parameter_count();
  std::string describe() const;
  std::uint64_t architecture_hash() const;
  const ModelConfig& config() const { return cfg_; }

  Prediction decode(const HeadOutputs& out, std::size_t i) const;
  std::vector<Prediction> predict(std::span<const data::Sequence> seqs,
                                  std::size_t batch = 256);
  std::vector<Prediction> predict(const std::vector<std::array<double, data::kWindow>>& windows);

  /// Regression targets are standardised: zero mean and unit variance for a
  /// value uniform over its range (window indices, configured dB range), so
  /// each MSE starts on the same scale as the BCE under equal loss weights.
  double normalize_position(double idx) const;
  double normalize_reflectance(double db) const;
  double denormalize_position(double t) const;
  double denormalize_reflectance(double t) const;

  void save(const std::filesystem::path& checkpoint, nn::Adam* opt = nullptr);
  void load(const std::filesystem::path& checkpoint, nn::Adam* opt = nullptr);

 private:
  ModelConfig cfg_;
  nn::Sequential trunk_;
  std::array<nn::Sequential, 3> heads_;
  std::size_t flat_features_ = 0;
};

nn::Tensor make_batch(std::span<const data::Sequence> seqs,
                      std::span<const std::size_t> indices);
Labels make_labels(const MultiTaskNet& net, std::span<const data::Sequence> seqs,
                   std::span<const std::size_t> indices);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train, val;
};

struct TrainResult {
  std::unique_ptr<MultiTaskNet> net;
  std::vector<EpochRecord> history;
  LossBreakdown initial_val;
  int best_epoch = 0;
};

LossBreakdown evaluate_loss(MultiTaskNet& net, const data::Dataset& ds,
                            data::Split split);

/// Mini-batch Adam with seeded shuffling and early stopping on validation
/// total loss; the returned network holds the best-epoch parameters.
TrainResult train(const data::Dataset& ds, const ModelConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history);

/// Class 1 iff p_event >= tau.
inline int predict_threshold(double p_event, double tau) {
  return p_event >= tau ? 1 : 0;
}

}  // namespace otdr::model
