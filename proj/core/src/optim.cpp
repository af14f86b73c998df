#include "maedet/optim.hpp"

#include <algorithm>
#include <cmath>

#include "maedet/errors.hpp"

namespace maedet {

AdamW::AdamW(ParamList* params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
  if (params_ == nullptr) throw ConfigError("AdamW: null parameter list");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
    throw ConfigError("AdamW: betas must lie in [0, 1)");
  if (cfg_.eps <= 0.0) throw ConfigError("AdamW: eps must be positive");
  m_.reserve(params_->size());
  v_.reserve(params_->size());
  for (const Param& p : *params_) {
    const size_t n = static_cast<size_t>(p.tensor.numel());
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

namespace {

template <class T>
void adamw_update(Tensor& t, std::vector<double>& m, std::vector<double>& v,
                  bool decay, double lr, const AdamWConfig& cfg, double bc1,
                  double bc2) {
  T* p = t.data<T>();
  const T* g = t.has_grad() ? t.grad_data<T>() : nullptr;
  const size_t n = m.size();
  for (size_t i = 0; i < n; ++i) {
    double pi = static_cast<double>(p[i]);
    if (decay) pi -= lr * cfg.weight_decay * pi;
    const double gi = g ? static_cast<double>(g[i]) : 0.0;
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    pi -= lr * mh / (std::sqrt(vh) + cfg.eps);
    p[i] = static_cast<T>(pi);
  }
}

}  // namespace

void AdamW::step(double lr) {
  if (params_->size() != m_.size())
    throw ConfigError("AdamW: parameter list changed size after construction");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_->size(); ++k) {
    Param& prm = (*params_)[k];
    if (static_cast<size_t>(prm.tensor.numel()) != m_[k].size())
      throw ShapeError("AdamW: parameter '" + prm.name +
                       "' changed shape after construction");
    if (prm.tensor.dtype() == Dtype::F32)
      adamw_update<float>(prm.tensor, m_[k], v_[k], prm.decay, lr, cfg_, bc1, bc2);
    else
      adamw_update<double>(prm.tensor, m_[k], v_[k], prm.decay, lr, cfg_, bc1, bc2);
  }
}

void AdamW::zero_grad() {
  for (Param& p : *params_) p.tensor.zero_grad();
}

void validate_schedule(const ScheduleSpec& s) {
  if (s.warmup < 0) throw ConfigError("schedule: warmup must be >= 0");
  if (s.kind == ScheduleKind::WarmupCosine && s.total <= s.warmup)
    throw ConfigError("schedule: cosine requires total > warmup");
  if (s.factor <= 0.0) throw ConfigError("schedule: decay factor must be positive");
  if (s.steps_per_epoch < 1)
    throw ConfigError("schedule: steps_per_epoch must be >= 1");
  for (size_t i = 1; i < s.milestones.size(); ++i)
    if (s.milestones[i] <= s.milestones[i - 1])
      throw ConfigError("schedule: milestones must be strictly increasing");
}

double lr_at(const ScheduleSpec& s, int64_t step, double base_lr) {
  if (step < s.warmup)
    return base_lr * static_cast<double>(step) / static_cast<double>(s.warmup);
  if (s.kind == ScheduleKind::WarmupCosine) {
    const double span = static_cast<double>(s.total - s.warmup);
    double phase = static_cast<double>(step - s.warmup) / span;
    phase = std::clamp(phase, 0.0, 1.0);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * phase));
  }
  const int64_t epoch = step / s.steps_per_epoch;
  int64_t passed = 0;
  for (int64_t ms : s.milestones)
    if (ms <= epoch) ++passed;
  return base_lr * std::pow(s.factor, static_cast<double>(passed));
}

double scaled_base_lr(double base_lr, int64_t batch_size, bool auto_scale,
                      int64_t ref_batch) {
  if (!auto_scale) return base_lr;
  if (batch_size < 1 || ref_batch < 1)
    throw ConfigError("lr scaling: batch sizes must be >= 1");
  return base_lr * static_cast<double>(batch_size) / static_cast<double>(ref_batch);
}

namespace {

template <class T>
double grad_sumsq(const Tensor& t) {
  const T* g = t.grad_data<T>();
  double s = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) s += static_cast<double>(g[i]) * g[i];
  return s;
}

template <class T>
void grad_scale(Tensor& t, double factor) {
  T* g = t.grad_data<T>();
  for (int64_t i = 0; i < t.numel(); ++i)
    g[i] = static_cast<T>(static_cast<double>(g[i]) * factor);
}

}  // namespace

double clip_grad_norm(ParamList& params, double max_norm) {
  double sumsq = 0.0;
  for (const Param& p : params) {
    if (!p.tensor.has_grad()) continue;
    sumsq += p.tensor.dtype() == Dtype::F32 ? grad_sumsq<float>(p.tensor)
                                            : grad_sumsq<double>(p.tensor);
  }
  const double norm = std::sqrt(sumsq);
  if (max_norm <= 0.0 || norm <= max_norm || norm == 0.0) return norm;
  const double factor = max_norm / norm;
  for (Param& p : params) {
    if (!p.tensor.has_grad()) continue;
    if (p.tensor.dtype() == Dtype::F32)
      grad_scale<float>(p.tensor, factor);
    else
      grad_scale<double>(p.tensor, factor);
  }
  return norm;
}

}  // namespace maedet
