#include "otdr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "otdr/binary_io.hpp"
#include "otdr/error.hpp"

namespace otdr::model {

void ModelConfig::validate() const {
  for (int f : conv_filters)
    require(f >= 1, ErrorKind::Config, "conv_filters must be positive");
  require(head_hidden >= 1, ErrorKind::Config, "head_hidden must be positive");
  for (double l : loss_weights)
    require(std::isfinite(l) && l >= 0.0, ErrorKind::Config,
            "loss weights must be finite and >= 0");
  require(kernel >= 1 && stride >= 1 && pad >= 0 && pool >= 1, ErrorKind::Config,
          "kernel/stride/pad/pool out of range");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config,
          "dropout must lie in [0, 1)");
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::Config, "lr must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::Config,
          "lr_decay must lie in (0, 1]");
  require(batch_size >= 1 && max_epochs >= 1 && patience >= 1, ErrorKind::Config,
          "batch_size, max_epochs and patience must be >= 1");
  require(reflectance_range[1] > reflectance_range[0], ErrorKind::Config,
          "reflectance_range must be increasing");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"conv_filters", c.conv_filters},
          {"head_hidden", c.head_hidden},
          {"loss_weights", c.loss_weights},
          {"kernel", c.kernel},
          {"stride", c.stride},
          {"pad", c.pad},
          {"pool", c.pool},
          {"dropout", c.dropout},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"reflectance_range", c.reflectance_range}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "conv_filters") c.conv_filters = v.get<std::array<int, 4>>();
      else if (key == "head_hidden") c.head_hidden = v.get<int>();
      else if (key == "loss_weights") c.loss_weights = v.get<std::array<double, 3>>();
      else if (key == "kernel") c.kernel = v.get<int>();
      else if (key == "stride") c.stride = v.get<int>();
      else if (key == "pad") c.pad = v.get<int>();
      else if (key == "pool") c.pool = v.get<int>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "lr_decay") c.lr_decay = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "max_epochs") c.max_epochs = v.get<int>();
      else if (key == "patience") c.patience = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "reflectance_range")
        c.reflectance_range = v.get<std::array<double, 2>>();
      else fail(ErrorKind::Format, "unknown ModelConfig field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("ModelConfig: ") + e.what());
  }
  c.validate();
  return c;
}

// --- loss ------------------------------------------------------------------

LossBreakdown total_loss(const HeadOutputs& out, const Labels& labels,
                         const std::array<double, 3>& lambda, LossGrads* grads) {
  const std::size_t n = labels.size();
  require(n > 0, ErrorKind::Data, "total_loss: empty batch");
  require(out.size() == n && out.position.size() == n &&
              out.reflectance.size() == n && labels.position.size() == n &&
              labels.reflectance.size() == n,
          ErrorKind::Shape, "total_loss: batch misaligned");

  LossBreakdown lb;
  lb.n = n;
  for (auto c : labels.cls) lb.n_pos += c == 1;

  if (grads) {
    grads->logit.assign(n, 0.0);
    grads->position.assign(n, 0.0);
    grads->reflectance.assign(n, 0.0);
  }

  const double inv_n = 1.0 / double(n);
  const double inv_pos = lb.n_pos ? 1.0 / double(lb.n_pos) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = labels.cls[i];
    const double p = nn::sigmoid(out.logit[i]);
    lb.bce += nn::bce(p, y) * inv_n;
    if (grads) grads->logit[i] = lambda[0] * nn::bce_grad_logit(p, y) * inv_n;
    if (labels.cls[i] != 1) continue;
    const double dp = out.position[i] - labels.position[i];
    const double dr = out.reflectance[i] - labels.reflectance[i];
    lb.mse_position += dp * dp * inv_pos;
    lb.mse_reflectance += dr * dr * inv_pos;
    if (grads) {
      grads->position[i] = lambda[1] * 2.0 * dp * inv_pos;
      grads->reflectance[i] = lambda[2] * 2.0 * dr * inv_pos;
    }
  }
  lb.total = lambda[0] * lb.bce + lambda[1] * lb.mse_position +
             lambda[2] * lb.mse_reflectance;
  return lb;
}

// --- network ---------------------------------------------------------------

MultiTaskNet::MultiTaskNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng init_rng(derive_seed(cfg_.seed, 0, stream::kInit));

  std::size_t channels = 1, length = data::kWindow;
  std::uint64_t dropout_index = 0;
  for (std::size_t i = 0; i < cfg_.conv_filters.size(); ++i) {
    const auto out = static_cast<std::size_t>(cfg_.conv_filters[i]);
    auto conv = std::make_unique<nn::Conv1d>(channels, out, cfg_.kernel, cfg_.stride,
                                             cfg_.pad, "conv" + std::to_string(i + 1));
    conv->init(init_rng);
    trunk_.add(std::move(conv));
    trunk_.add(std::make_unique<nn::ReLU>());
    trunk_.add(std::make_unique<nn::Dropout>(
        cfg_.dropout, derive_seed(cfg_.seed, dropout_index++, stream::kDropout)));
    channels = out;
    length = nn::conv1d_output_length(length, cfg_.kernel, cfg_.stride, cfg_.pad);
  }
  require(static_cast<std::size_t>(cfg_.pool) <= length, ErrorKind::Config,
          "pool window exceeds feature length");
  trunk_.add(std::make_unique<nn::MaxPool1d>(cfg_.pool));
  trunk_.add(std::make_unique<nn::Flatten>());
  length /= cfg_.pool;
  flat_features_ = channels * length;

  static constexpr const char* kHeadNames[] = {"detect", "position", "reflectance"};
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const std::string name = kHeadNames[h];
    auto hidden = std::make_unique<nn::Dense>(flat_features_, cfg_.head_hidden,
                                              name + ".hidden");
    hidden->init(init_rng, nn::Dense::Init::He);
    auto output = std::make_unique<nn::Dense>(cfg_.head_hidden, 1, name + ".out");
    output->init(init_rng, nn::Dense::Init::Glorot);
    heads_[h].add(std::move(hidden));
    heads_[h].add(std::make_unique<nn::ReLU>());
    heads_[h].add(std::move(output));
  }
}

HeadOutputs MultiTaskNet::forward(const nn::Tensor& x, nn::Mode mode) {
  require(x.rank() == 3 && x.dim(1) == 1 && x.dim(2) == data::kWindow,
          ErrorKind::Shape, "model input must be (batch, 1, 35)");
  const auto features = trunk_.forward(x, mode);
  HeadOutputs out;
  std::vector<double>* dst[] = {&out.logit, &out.position, &out.reflectance};
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    *dst[h] = heads_[h].forward(features, mode).data;
  }
  return out;
}

void MultiTaskNet::backward(const LossGrads& grads) {
  const std::size_t B = grads.size();
  const std::vector<double>* src[] = {&grads.logit, &grads.position,
                                      &grads.reflectance};
  nn::Tensor feature_grad({B, flat_features_});
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    nn::Tensor g({B, 1});
    g.data = *src[h];
    const auto gh = heads_[h].backward(g);
    for (std::size_t i = 0; i < gh.size(); ++i) feature_grad.data[i] += gh.data[i];
  }
  trunk_.backward(feature_grad);
}

std::vector<nn::Param*> MultiTaskNet::params() {
  auto out = trunk_.params();
  for (auto& head : heads_)
    for (auto* p : head.params()) out.push_back(p);
  return out;
}

std::size_t MultiTaskNet::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->size();
  return n;
}

std::string MultiTaskNet::describe() const {
  std::string s = "input(1x" + std::to_string(data::kWindow) + ");" + trunk_.describe();
  for (const auto& head : heads_) s += "head[" + head.describe() + "]";
  return s;
}

std::uint64_t MultiTaskNet::architecture_hash() const {
  const auto s = describe();
  return data::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

namespace {

// Uniform on [lo, hi] has standard deviation (hi - lo) / sqrt(12).
double standardize(double x, double lo, double hi) {
  return (x - 0.5 * (lo + hi)) * std::sqrt(12.0) / (hi - lo);
}

double unstandardize(double t, double lo, double hi) {
  return 0.5 * (lo + hi) + t * (hi - lo) / std::sqrt(12.0);
}

}  // namespace

double MultiTaskNet::normalize_position(double idx) const {
  return standardize(idx, 0.0, double(data::kWindow - 1));
}

double MultiTaskNet::normalize_reflectance(double db) const {
  return standardize(db, cfg_.reflectance_range[0], cfg_.reflectance_range[1]);
}

double MultiTaskNet::denormalize_position(double t) const {
  return unstandardize(t, 0.0, double(data::kWindow - 1));
}

double MultiTaskNet::denormalize_reflectance(double t) const {
  return unstandardize(t, cfg_.reflectance_range[0], cfg_.reflectance_range[1]);
}

Prediction MultiTaskNet::decode(const HeadOutputs& out, std::size_t i) const {
  Prediction p;
  p.logit = out.logit[i];
  p.p_event = nn::sigmoid(p.logit);
  p.position_idx_hat = denormalize_position(out.position[i]);
  p.reflectance_db_hat = denormalize_reflectance(out.reflectance[i]);
  return p;
}

std::vector<Prediction> MultiTaskNet::predict(std::span<const data::Sequence> seqs,
                                              std::size_t batch) {
  std::vector<Prediction> out;
  out.reserve(seqs.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < seqs.size(); start += batch) {
    const std::size_t stop = std::min(seqs.size(), start + batch);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto heads = forward(make_batch(seqs, idx), nn::Mode::Infer);
    for (std::size_t i = 0; i < heads.size(); ++i) out.push_back(decode(heads, i));
  }
  return out;
}

std::vector<Prediction> MultiTaskNet::predict(
    const std::vector<std::array<double, data::kWindow>>& windows) {
  nn::Tensor x({windows.size(), 1, data::kWindow});
  for (std::size_t b = 0; b < windows.size(); ++b)
    std::copy(windows[b].begin(), windows[b].end(), x.data.begin() + b * data::kWindow);
  const auto heads = forward(x, nn::Mode::Infer);
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < heads.size(); ++i) out.push_back(decode(heads, i));
  return out;
}

void MultiTaskNet::save(const std::filesystem::path& checkpoint, nn::Adam* opt) {
  nn::save_checkpoint(checkpoint, architecture_hash(), params(), opt);
}

void MultiTaskNet::load(const std::filesystem::path& checkpoint, nn::Adam* opt) {
  nn::load_checkpoint(checkpoint, architecture_hash(), params(), opt);
}

nn::Tensor make_batch(std::span<const data::Sequence> seqs,
                      std::span<const std::size_t> indices) {
  nn::Tensor x({indices.size(), 1, data::kWindow});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& v = seqs[indices[b]].values;
    std::copy(v.begin(), v.end(), x.data.begin() + b * data::kWindow);
  }
  return x;
}

Labels make_labels(const MultiTaskNet& net, std::span<const data::Sequence> seqs,
                   std::span<const std::size_t> indices) {
  Labels l;
  for (auto i : indices) {
    const auto& s = seqs[i];
    l.cls.push_back(s.class_id);
    l.position.push_back(s.position_idx ? net.normalize_position(*s.position_idx) : 0.0);
    l.reflectance.push_back(
        s.reflectance_db ? net.normalize_reflectance(*s.reflectance_db) : 0.0);
  }
  return l;
}

// --- training --------------------------------------------------------------

namespace {

LossBreakdown loss_over(MultiTaskNet& net, std::span<const data::Sequence> seqs,
                        std::span<const std::size_t> indices) {
  HeadOutputs all;
  for (std::size_t start = 0; start < indices.size(); start += 512) {
    const auto chunk = indices.subspan(start, std::min<std::size_t>(512, indices.size() - start));
    const auto out = net.forward(make_batch(seqs, chunk), nn::Mode::Infer);
    all.logit.insert(all.logit.end(), out.logit.begin(), out.logit.end());
    all.position.insert(all.position.end(), out.position.begin(), out.position.end());
    all.reflectance.insert(all.reflectance.end(), out.reflectance.begin(),
                           out.reflectance.end());
  }
  return total_loss(all, make_labels(net, seqs, indices), net.config().loss_weights);
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  const double w = double(b.n);
  acc.total += b.total * w;
  acc.bce += b.bce * w;
  const double wp = double(b.n_pos);
  acc.mse_position += b.mse_position * wp;
  acc.mse_reflectance += b.mse_reflectance * wp;
  acc.n += b.n;
  acc.n_pos += b.n_pos;
}

void finish(LossBreakdown& acc, const std::array<double, 3>& lambda) {
  if (acc.n) acc.bce /= double(acc.n);
  if (acc.n_pos) {
    acc.mse_position /= double(acc.n_pos);
    acc.mse_reflectance /= double(acc.n_pos);
  }
  acc.total = lambda[0] * acc.bce + lambda[1] * acc.mse_position +
              lambda[2] * acc.mse_reflectance;
}

}  // namespace

LossBreakdown evaluate_loss(MultiTaskNet& net, const data::Dataset& ds,
                            data::Split split) {
  const auto idx = ds.indices(split);
  require(!idx.empty(), ErrorKind::Data, "split is empty");
  return loss_over(net, ds.sequences, idx);
}

TrainResult train(const data::Dataset& ds, const ModelConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto train_idx = ds.indices(data::Split::Train);
  const auto val_idx = ds.indices(data::Split::Val);
  require(!train_idx.empty() && !val_idx.empty(), ErrorKind::Data,
          "training needs non-empty train and val splits");

  TrainResult result;
  result.net = std::make_unique<MultiTaskNet>(cfg);
  MultiTaskNet& net = *result.net;
  auto params = net.params();
  nn::Adam opt(params, {.lr = cfg.lr});

  result.initial_val = loss_over(net, ds.sequences, val_idx);
  double best = result.initial_val.total;
  std::vector<std::vector<double>> best_params;
  for (auto* p : params) best_params.push_back(p->value);
  int since_best = 0;

  std::vector<std::size_t> order = train_idx;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, epoch, stream::kShuffle));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    opt.set_lr(cfg.lr * std::pow(cfg.lr_decay, epoch - 1));

    LossBreakdown train_acc;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto batch = std::span(order).subspan(
          start, std::min<std::size_t>(cfg.batch_size, order.size() - start));
      opt.zero_grad();
      const auto out = net.forward(make_batch(ds.sequences, batch), nn::Mode::Train);
      LossGrads grads;
      const auto lb = total_loss(out, make_labels(net, ds.sequences, batch),
                                 cfg.loss_weights, &grads);
      if (!std::isfinite(lb.total)) {
        fail(ErrorKind::Numeric,
             "training diverged (non-finite loss) in epoch " + std::to_string(epoch));
      }
      net.backward(grads);
      opt.step();
      accumulate(train_acc, lb);
    }
    finish(train_acc, cfg.loss_weights);

    EpochRecord rec{epoch, train_acc, loss_over(net, ds.sequences, val_idx)};
    if (!std::isfinite(rec.val.total)) {
      fail(ErrorKind::Numeric,
           "validation loss is not finite in epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val.total < best) {
      best = rec.val.total;
      result.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best_params[i] = params[i]->value;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
  return result;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history) {
  std::ostringstream ss;
  ss.precision(10);
  ss << "epoch,train_total,train_bce,train_mse_position,train_mse_reflectance,"
        "val_total,val_bce,val_mse_position,val_mse_reflectance\n";
  for (const auto& r : history) {
    ss << r.epoch << ',' << r.train.total << ',' << r.train.bce << ','
       << r.train.mse_position << ',' << r.train.mse_reflectance << ','
       << r.val.total << ',' << r.val.bce << ',' << r.val.mse_position << ','
       << r.val.mse_reflectance << '\n';
  }
  io::write_text(path, ss.str());
}

}  // namespace otdr::model
