#include "lipread/trainer.h"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lipread/error.h"
#include "lipread/rng.h"

namespace lipread {

AdamW::AdamW(const std::vector<Parameter>& params, AdamWConfig cfg) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape(), 0.0);
    v_.emplace_back(p.value.shape(), 0.0);
  }
}

void AdamW::step(std::vector<Parameter>& params, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
  double norm2 = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) norm2 += v * v;
  if (!std::isfinite(norm2)) throw NumericalError("non-finite gradient");
  const double norm = std::sqrt(norm2);
  const double clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params[i].value;
    const bool decay = w.rank() >= 2;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j] * clip;
      double& m = m_[i][j];
      double& v = v_[i][j];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      if (decay) w[j] -= lr * cfg_.weight_decay * w[j];
      w[j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
    }
  }
}

double one_cycle_lr(long step, long total_steps, double peak) {
  if (total_steps < 1 || step < 0 || step >= total_steps) throw std::out_of_range("one_cycle_lr: step out of range");
  const double start = peak / 25.0;
  if (total_steps == 1) return start;
  const long last = total_steps - 1;
  const long top = std::lround(0.3 * static_cast<double>(last));
  if (step <= top) return top == 0 ? peak : start + (peak - start) * static_cast<double>(step) / static_cast<double>(top);
  return peak * static_cast<double>(last - step) / static_cast<double>(last - top);
}

RoiClip eval_view(const RoiClip& clip, const AugmentConfig& cfg) { return center_crop(clip, cfg.crop); }

std::vector<EpochStats> train(Model& model, const std::vector<TrainExample>& data, const TrainConfig& cfg) {
  if (data.empty()) throw DataError("train: no training utterances");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be positive");
  AdamW opt(model.parameters(), cfg.adamw);
  const long total = static_cast<long>(cfg.epochs) * static_cast<long>(data.size());
  std::vector<EpochStats> history;
  std::vector<Tensor> grads;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(cfg.seed, static_cast<uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);

    EpochStats st;
    st.epoch = epoch;
    double sum = 0.0;
    for (std::size_t idx : order) {
      const TrainExample& ex = data[idx];
      const uint64_t aug_seed = mix_seed(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)), idx);
      RoiClip view = cfg.augment ? augment(ex.clip, aug_seed, cfg.augment_cfg) : eval_view(ex.clip, cfg.augment_cfg);
      grads.clear();
      for (const auto& p : model.parameters()) grads.emplace_back(p.value.shape(), 0.0);
      const double lr = one_cycle_lr(step++, total, cfg.lr);
      UtteranceLoss ul = utterance_loss(model, view, ex.target, cfg.alpha, &grads);
      if (!ul.ctc_reachable) {
        ++st.skipped;
        log_warning("train: utterance " + ex.id + " has too few frames for its transcript; skipped");
        continue;
      }
      if (!std::isfinite(ul.loss)) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << ", utterance " << ex.id << " (loss " << ul.loss << ")";
        throw NumericalError(os.str());
      }
      opt.step(model.parameters(), grads, lr);
      sum += ul.loss;
      ++st.used;
    }
    st.mean_loss = st.used > 0 ? sum / st.used : 0.0;
    {
      std::ostringstream os;
      os << "epoch " << epoch << " loss " << st.mean_loss << " (" << st.used << " utterances, " << st.skipped
         << " skipped)";
      log_info(os.str());
    }
    history.push_back(st);
    if (cfg.on_epoch && !cfg.on_epoch(model, st)) break;
  }
  return history;
}

}  // namespace lipread
