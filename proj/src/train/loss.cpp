#include <cmath>

#include "vmbh/error.hpp"
#include "vmbh/train.hpp"

namespace vmbh::train {

const std::array<const char*, kLossTerms> kLossTermNames{"theta_l", "theta_r", "beta_l",  "beta_r", "joint_l",
                                                         "joint_r", "vert_l",  "vert_r", "trel"};

LossWeights LossWeights::from_config(const PipelineConfig& config) {
  LossWeights w;
  w.lambda = config.loss_weights;
  w.validate();
  return w;
}

void LossWeights::validate() const {
  for (std::size_t i = 0; i < kLossTerms; ++i) {
    if (!(lambda[i] >= 0.0) || !std::isfinite(lambda[i])) {
      throw ConfigError(std::string("loss weight for ") + kLossTermNames[i] + " must be finite and >= 0");
    }
  }
}

LossValue loss(const pipeline::FullOutput& pred, const TrainingSample& gt, const LossWeights& weights) {
  const std::array<std::pair<Tensor, Tensor>, kLossTerms> pairs{{
      {pred.left.params.theta, gt.theta_l},
      {pred.right.params.theta, gt.theta_r},
      {pred.left.params.beta, gt.beta_l},
      {pred.right.params.beta, gt.beta_r},
      {pred.left.mesh.joints, gt.joints_l},
      {pred.right.mesh.joints, gt.joints_r},
      {pred.left.mesh.vertices, gt.vertices_l},
      {pred.right.mesh.vertices, gt.vertices_r},
      {pred.t_rel, gt.t_rel},
  }};
  for (std::size_t i = 0; i < kLossTerms; ++i) {
    const auto& [p, g] = pairs[i];
    if (!p.defined() || !g.defined() || p.shape() != g.shape()) {
      throw DimensionError(std::string("loss term ") + kLossTermNames[i] + ": prediction " +
                           (p.defined() ? shape_str(p.shape()) : "<missing>") + " vs target " +
                           (g.defined() ? shape_str(g.shape()) : "<missing>"));
    }
  }
  LossValue out;
  Tensor total;
  for (std::size_t i = 0; i < kLossTerms; ++i) {
    auto term = mean(abs(sub(pairs[i].first, pairs[i].second)));
    out.terms[i] = term.item();
    auto weighted = scale(term, weights.lambda[i]);
    total = total.defined() ? add(total, weighted) : weighted;
  }
  out.total = total;
  return out;
}

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
  }
  ++t_;
  double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    auto g = t.grad();
    auto x = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      double mh = m[j] / c1;
      double vh = v[j] / c2;
      x[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double lr_schedule(std::size_t epoch, double base, const std::vector<std::size_t>& milestones, double decay) {
  double lr = base;
  for (auto m : milestones) {
    if (epoch >= m) lr *= decay;
  }
  return lr;
}

double lr_schedule(std::size_t epoch, const PipelineConfig& config) {
  return lr_schedule(epoch, config.learning_rate, config.lr_milestones, config.lr_decay);
}

}  // namespace vmbh::train
