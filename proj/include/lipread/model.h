#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lipread/autograd.h"
#include "lipread/ctc.h"
#include "lipread/roi.h"
#include "lipread/tokenizer.h"

namespace lipread {

enum class PosEncoding { kAbsolute, kRelative };

struct ModelConfig {
  int d = 32;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 2;
  int ffn_dim = 0;  // 0 means 4d
  int temporal_kernel = 5;
  int spatial_kernel = 7;
  int frontend_channels1 = 8;
  int frontend_channels2 = 16;
  int frontend_stride = 4;
  int conv_module_kernel = 5;
  int vocab_size = Vocabulary::kSize;
  PosEncoding pos_encoding = PosEncoding::kAbsolute;
  int rel_max_dist = 16;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * d; }
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Parameter {
  std::string name;
  Tensor value;
};

class Model {
 public:
  Model() = default;
  // Xavier-uniform matrices, zero biases, unit norm gains.
  static Model init(const ModelConfig& cfg, uint64_t seed);
  // Takes ownership of named tensors; names and shapes must match init(cfg).
  static Model from_parameters(const ModelConfig& cfg, std::vector<Parameter> params);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  int index(const std::string& name) const;
  Tensor& tensor(const std::string& name) { return params_[static_cast<std::size_t>(index(name))].value; }
  const Tensor& tensor(const std::string& name) const { return params_[static_cast<std::size_t>(index(name))].value; }
  std::size_t num_scalars() const;

 private:
  void add(std::string name, Tensor value);
  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> index_;
};

// Binds model parameters into one graph, each at most once.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const Model& m) : g_(g), m_(m), vars_(m.parameters().size()) {}
  Var operator()(const std::string& name);
  Graph& graph() { return g_; }
  const Model& model() const { return m_; }

 private:
  Graph& g_;
  const Model& m_;
  std::vector<Var> vars_;
};

// Sinusoidal table [T, d].
Tensor sinusoidal_encoding(int frames, int d);

// --- graph-level forward passes ---------------------------------------------
// Clip frames -> [T, d]; positional encoding is added when `with_position`.
Var frontend_forward(ParamBinder& p, const RoiClip& clip, bool with_position = true);
Var encoder_forward(ParamBinder& p, Var feats);
Var ctc_head(ParamBinder& p, Var latents);  // [T, V] log-probabilities
// Teacher-forced decoder over [eos] + targets -> [|targets| + 1, V] log-probabilities.
Var decoder_forward(ParamBinder& p, Var latents, std::span<const TokenId> targets);
// -(alpha * ctc + (1 - alpha) * attn); a term with zero weight is not evaluated.
Var hybrid_loss(Graph& g, Var ctc_loglik, Var attn_loglik, double alpha);

double hybrid_loss(double ctc_loglik, double attn_loglik, double alpha);

// --- inference helpers (no gradient tape) -----------------------------------
Tensor encode_clip(const Model& m, const RoiClip& clip);  // latents [T, d]
CtcPosterior ctc_posterior(const Model& m, const Tensor& latents);
Tensor decoder_forward(const Model& m, const Tensor& latents, std::span<const TokenId> targets);
// Row |prefix| of decoder_forward(latents, prefix + anything).
std::vector<double> decoder_score_step(const Model& m, const Tensor& latents, std::span<const TokenId> prefix);

struct UtteranceLoss {
  double loss = 0.0;
  double ctc_loglik = 0.0;   // 0 when alpha == 0
  double attn_loglik = 0.0;  // 0 when alpha == 1
  bool ctc_reachable = true;
};

// Forward (and, with grads != nullptr, backward accumulating into grads,
// which must be shaped like the parameters) for one utterance.
UtteranceLoss utterance_loss(const Model& m, const RoiClip& clip, std::span<const TokenId> target, double alpha,
                             std::vector<Tensor>* grads);

}  // namespace lipread
