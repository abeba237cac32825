#pragma once

#include <random>
#include <string>
#include <vector>

#include "gradcheck.h"
#include "lipread/model.h"

namespace lipread::testing {

// d=8 with a shrunken frontend so finite differences over every scalar stay cheap.
inline ModelConfig tiny_config(PosEncoding pe = PosEncoding::kAbsolute) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.temporal_kernel = 3;
  cfg.spatial_kernel = 3;
  cfg.frontend_channels1 = 2;
  cfg.frontend_channels2 = 3;
  cfg.frontend_stride = 2;
  cfg.conv_module_kernel = 3;
  cfg.pos_encoding = pe;
  cfg.rel_max_dist = 2;
  return cfg;
}

inline RoiClip random_clip(int frames, int size, std::mt19937_64& gen) {
  RoiClip clip(frames, size, size);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : clip.data) v = nd(gen);
  return clip;
}

// Perturbs biases and gains away from their initial values so that no
// gradient is trivially symmetric.
inline void jitter(Model& m, uint64_t seed, double scale = 0.1) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& p : m.parameters())
    for (auto& v : p.value.values()) v += nd(gen);
}

struct GradReport {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
};

// Central differences (step eps) of utterance_loss against its analytic
// gradient for every parameter whose name starts with one of `prefixes`.
inline GradReport model_grad_error(Model m, const RoiClip& clip, const TokenSeq& target, double alpha,
                                   const std::vector<std::string>& prefixes, double eps = 1e-4,
                                   double floor = 1e-6) {
  std::vector<Tensor> grads;
  for (const auto& p : m.parameters()) grads.emplace_back(p.value.shape(), 0.0);
  utterance_loss(m, clip, target, alpha, &grads);
  GradReport report;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const std::string& name = m.parameters()[i].name;
    bool selected = false;
    for (const auto& pre : prefixes) selected = selected || name.rfind(pre, 0) == 0;
    if (!selected) continue;
    Tensor& value = m.parameters()[i].value;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double saved = value[j];
      value[j] = saved + eps;
      const double fp = utterance_loss(m, clip, target, alpha, nullptr).loss;
      value[j] = saved - eps;
      const double fm = utterance_loss(m, clip, target, alpha, nullptr).loss;
      value[j] = saved;
      const double err = rel_error(grads[i][j], (fp - fm) / (2.0 * eps), floor);
      ++report.checked;
      if (err > report.worst) {
        report.worst = err;
        report.worst_name = name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return report;
}

}  // namespace lipread::testing
