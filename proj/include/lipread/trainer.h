#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lipread/model.h"
#include "lipread/roi.h"

namespace lipread {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.01;  // decoupled; applied to matrices and conv filters only
  double grad_clip = 5.0;      // global L2 norm; <= 0 disables
};

class AdamW {
 public:
  AdamW(const std::vector<Parameter>& params, AdamWConfig cfg);
  void step(std::vector<Parameter>& params, const std::vector<Tensor>& grads, double lr);
  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// Linear warm-up from peak/25 at step 0 to peak at round(0.3 (S-1)), then
// linear decay to 0 at step S-1.
double one_cycle_lr(long step, long total_steps, double peak);

struct TrainExample {
  std::string id;
  RoiClip clip;  // normalized, full ROI size
  TokenSeq target;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  int used = 0;
  int skipped = 0;  // CTC target unreachable
};

struct TrainConfig {
  int epochs = 5;
  double lr = 5e-4;
  double alpha = 0.1;
  uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augment_cfg;
  AdamWConfig adamw;
  // Called after every epoch; returning false stops training.
  std::function<bool(const Model&, const EpochStats&)> on_epoch;
};

// Batch size 1, epoch order shuffled from (seed, epoch). Throws
// NumericalError on a non-finite loss or gradient.
std::vector<EpochStats> train(Model& model, const std::vector<TrainExample>& data, const TrainConfig& cfg);

// The crop the model sees at evaluation time.
RoiClip eval_view(const RoiClip& clip, const AugmentConfig& cfg = {});

}  // namespace lipread
