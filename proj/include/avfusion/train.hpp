#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "avfusion/losses.hpp"
#include "avfusion/model.hpp"
#include "avfusion/parallel.hpp"

namespace avf {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  FocalConfig focal;
  std::size_t max_steps = 0;  // stop after this many optimizer steps; 0 = no cap

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.batch_size == b.batch_size && a.learning_rate == b.learning_rate && a.epochs == b.epochs &&
           a.seed == b.seed && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.epsilon == b.epsilon &&
           a.focal.alpha == b.focal.alpha && a.focal.gamma == b.focal.gamma && a.max_steps == b.max_steps;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
       {"seed", c.seed},             {"beta1", c.beta1},                 {"beta2", c.beta2},
       {"epsilon", c.epsilon},       {"focal_alpha", c.focal.alpha},     {"focal_gamma", c.focal.gamma},
       {"max_steps", c.max_steps}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.beta1 = j.value("beta1", d.beta1), c.beta2 = j.value("beta2", d.beta2), c.epsilon = j.value("epsilon", d.epsilon);
  c.focal.alpha = j.value("focal_alpha", d.focal.alpha), c.focal.gamma = j.value("focal_gamma", d.focal.gamma);
  c.max_steps = j.value("max_steps", d.max_steps);
}

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (c.batch_size == 0) fail("batch_size must be positive");
  if (c.epochs == 0) fail("epochs must be positive");
  if (!(c.learning_rate >= 0.0 && std::isfinite(c.learning_rate))) fail("learning_rate must be finite and >= 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(c.epsilon > 0.0)) fail("epsilon must be positive");
  if (!(c.focal.alpha > 0.0 && c.focal.gamma >= 0.0)) fail("focal alpha must be positive and gamma >= 0");
}

/// Adam with bias-corrected moments; one update per call, applied in
/// parameter order.
class Adam {
 public:
  Adam(const ParamSet<float>& params, const TrainConfig& c)
      : lr_(c.learning_rate), b1_(c.beta1), b2_(c.beta2), eps_(c.epsilon) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].size(), 0.0);
      v_.emplace_back(params[i].size(), 0.0);
    }
  }

  std::size_t steps() const { return t_; }

  void step(ParamSet<float>& params, const std::vector<std::vector<double>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = grads[i][k];
        m_[i][k] = b1_ * m_[i][k] + (1.0 - b1_) * g;
        v_[i][k] = b2_ * v_[i][k] + (1.0 - b2_) * g * g;
        const double update = lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
        p[k] = static_cast<float>(static_cast<double>(p[k]) - update);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// One training example as the model consumes it.
struct TrainItem {
  Tensor<float> clip, mel;
  std::vector<BoundingBox> boxes;
};

/// Random-access example provider. `get` may be called concurrently.
struct TrainSource {
  std::size_t size = 0;
  std::function<TrainItem(std::size_t)> get;
};

struct StepRecord {
  std::size_t epoch = 0, step = 0;  // epoch is 1-based; step counts optimizer updates from 1
  LossTerms terms;                  // batch mean
  double total() const { return terms.total(); }
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(std::size_t epoch, const Model&)> on_epoch;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean;  // mean batch l_total per epoch
};

/// Loss and parameter gradients of one example.
struct ExampleGrad {
  LossTerms terms;
  std::vector<Tensor<float>> grads;
};

inline ExampleGrad example_gradient(const Model& m, const TrainItem& item, const FocalConfig& focal) {
  const TargetGrid targets = assign_targets(item.boxes, m.anchors, m.config.encoder.grid_h, m.config.encoder.grid_w);
  Graph<float> g;
  const auto b = bind(g, m.params, true);
  const auto f = forward(g, g.leaf(item.clip), g.leaf(item.mel), b, m.config);
  ExampleGrad out;
  const Var loss = detection_loss(g, f.raw, targets, focal, &out.terms);
  g.backward(loss);
  for (Var v : b.vars) out.grads.push_back(g.grad(v));
  return out;
}

/// Epoch order: a permutation of [0, n) seeded by (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, epoch, 0x7a1));
  rng.shuffle(order.begin(), order.end());
  return order;
}

/// Mini-batch Adam on the mean batch loss. Examples within a batch run in
/// parallel and their gradients are summed in batch order, so results do not
/// depend on the worker count.
inline TrainResult train(Model& model, const TrainSource& data, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  if (data.size == 0) throw std::invalid_argument("train: empty training set");
  if (model.anchors.size() != model.config.num_anchors)
    throw std::invalid_argument("train: model has " + std::to_string(model.anchors.size()) + " anchors, config expects " +
                                std::to_string(model.config.num_anchors));
  Adam adam(model.params, cfg);
  TrainResult result;
  const std::size_t P = model.params.size();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(data.size, cfg.seed, epoch);
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && adam.steps() >= cfg.max_steps) break;
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      std::vector<ExampleGrad> parts(B);
      parallel_for(B, [&](std::size_t i) { parts[i] = example_gradient(model, data.get(order[start + i]), cfg.focal); });

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = adam.steps() + 1;
      std::vector<std::vector<double>> grads(P);
      for (std::size_t p = 0; p < P; ++p) grads[p].assign(model.params[p].size(), 0.0);
      for (const auto& part : parts) {
        rec.terms += part.terms;
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += part.grads[p][k];
      }
      const double inv = 1.0 / static_cast<double>(B);
      rec.terms *= inv;
      bool finite = std::isfinite(rec.total());
      for (auto& gp : grads)
        for (auto& v : gp) {
          v *= inv;
          finite = finite && std::isfinite(v);
        }
      if (!finite) {
        std::string ids;
        for (std::size_t i = 0; i < B; ++i) ids += (i ? "," : "") + std::to_string(order[start + i]);
        throw NonFiniteError("train: non-finite loss or gradient in batch " + std::to_string(start / cfg.batch_size) +
                             " of epoch " + std::to_string(epoch) + " (step " + std::to_string(rec.step) +
                             ", examples " + ids + ")");
      }
      adam.step(model.params, grads);
      epoch_sum += rec.total();
      ++epoch_batches;
      result.steps.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
    }
    if (epoch_batches == 0) break;
    result.epoch_mean.push_back(epoch_sum / static_cast<double>(epoch_batches));
    model.state["epoch"] = epoch;
    model.state["step"] = adam.steps();
    if (hooks.on_epoch) hooks.on_epoch(epoch, model);
  }
  return result;
}

inline void write_loss_csv(std::ostream& os, const std::vector<StepRecord>& steps) {
  os << "epoch,step,l_total,l_focal,l_x,l_y,l_w,l_h,l_conf\n";
  char buf[256];
  for (const auto& s : steps) {
    const auto& t = s.terms;
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.epoch, s.step, s.total(), t.focal,
                  t.x, t.y, t.w, t.h, t.conf);
    os << buf;
  }
}

}  // namespace avf
