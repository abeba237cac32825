#include "lipread/model.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "lipread/error.h"
#include "lipread/rng.h"

namespace lipread {
namespace {

void check_positive(int v, const char* name) {
  if (v <= 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
}

Tensor xavier(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-a, a);
  return t;
}

std::string layer(const char* prefix, int l) { return std::string(prefix) + "." + std::to_string(l) + "."; }

Var ffn_block(ParamBinder& p, const std::string& n, Var x) {
  Graph& g = p.graph();
  Var h = g.layer_norm(x, p(n + "ln.g"), p(n + "ln.b"));
  h = g.swish(g.linear(h, p(n + "w1"), p(n + "b1")));
  return g.linear(h, p(n + "w2"), p(n + "b2"));
}

// Multi-head attention; queries from xq, keys/values from xkv.
Var attention(ParamBinder& p, const std::string& n, Var xq, Var xkv, bool causal, bool relative) {
  Graph& g = p.graph();
  const ModelConfig& cfg = p.model().config();
  const int dh = cfg.d / cfg.heads;
  Var q = g.linear(xq, p(n + "wq"), p(n + "bq"));
  Var k = g.linear(xkv, p(n + "wk"), p(n + "bk"));
  Var v = g.linear(xkv, p(n + "wv"), p(n + "bv"));
  std::vector<Var> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    Var s = g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (relative) s = g.add_relative_bias(s, p(n + "rel"), h, cfg.rel_max_dist);
    heads.push_back(g.matmul(g.softmax_rows(s, causal), vh));
  }
  Var cat = cfg.heads == 1 ? heads[0] : g.concat_cols(heads);
  return g.linear(cat, p(n + "wo"), p(n + "bo"));
}

Var conv_module(ParamBinder& p, const std::string& n, Var x) {
  Graph& g = p.graph();
  Var h = g.layer_norm(x, p(n + "ln.g"), p(n + "ln.b"));
  h = g.glu(g.linear(h, p(n + "pw1.w"), p(n + "pw1.b")));
  h = g.swish(g.depthwise_conv_time(h, p(n + "dw.w"), p(n + "dw.b")));
  return g.linear(h, p(n + "pw2.w"), p(n + "pw2.b"));
}

Var pre_norm(ParamBinder& p, const std::string& n, Var x) {
  return p.graph().layer_norm(x, p(n + "g"), p(n + "b"));
}

}  // namespace

void ModelConfig::validate() const {
  check_positive(d, "d");
  check_positive(encoder_layers, "encoder_layers");
  check_positive(decoder_layers, "decoder_layers");
  check_positive(heads, "heads");
  check_positive(ffn(), "ffn_dim");
  check_positive(temporal_kernel, "temporal_kernel");
  check_positive(spatial_kernel, "spatial_kernel");
  check_positive(frontend_channels1, "frontend_channels1");
  check_positive(frontend_channels2, "frontend_channels2");
  check_positive(frontend_stride, "frontend_stride");
  check_positive(conv_module_kernel, "conv_module_kernel");
  check_positive(vocab_size, "vocab_size");
  check_positive(rel_max_dist, "rel_max_dist");
  if (d % heads != 0) throw std::invalid_argument("model config: heads must divide d");
  if (temporal_kernel % 2 == 0 || spatial_kernel % 2 == 0 || conv_module_kernel % 2 == 0)
    throw std::invalid_argument("model config: kernel sizes must be odd");
}

void Model::add(std::string name, Tensor value) {
  index_.emplace(name, static_cast<int>(params_.size()));
  params_.push_back({std::move(name), std::move(value)});
}

int Model::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::size_t Model::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  Rng rng(seed);
  const int d = cfg.d, f = cfg.ffn(), V = cfg.vocab_size;
  const int c1 = cfg.frontend_channels1, c2 = cfg.frontend_channels2;
  const int kt = cfg.temporal_kernel, ks = cfg.spatial_kernel;
  auto lin = [&](const std::string& n, int in, int out, const char* w = "w", const char* b = "b") {
    m.add(n + w, xavier({in, out}, in, out, rng));
    m.add(n + b, Tensor({out}));
  };
  auto norm = [&](const std::string& n) {
    m.add(n + "g", Tensor({d}, 1.0));
    m.add(n + "b", Tensor({d}));
  };
  auto attn = [&](const std::string& n, bool relative) {
    for (const char* s : {"q", "k", "v", "o"}) lin(n, d, d, (std::string("w") + s).c_str(), (std::string("b") + s).c_str());
    if (relative) m.add(n + "rel", Tensor({cfg.heads, 2 * cfg.rel_max_dist + 1}));
  };
  auto ffn = [&](const std::string& n) {
    norm(n + "ln.");
    lin(n, d, f, "w1", "b1");
    lin(n, f, d, "w2", "b2");
  };

  m.add("front.conv3d.w", xavier({c1, kt, ks, ks}, kt * ks * ks, c1 * kt * ks * ks, rng));
  m.add("front.conv3d.b", Tensor({c1}));
  m.add("front.conv2d1.w", xavier({c2, c1, 3, 3}, c1 * 9, c2 * 9, rng));
  m.add("front.conv2d1.b", Tensor({c2}));
  m.add("front.conv2d2.w", xavier({c2, c2, 3, 3}, c2 * 9, c2 * 9, rng));
  m.add("front.conv2d2.b", Tensor({c2}));
  lin("front.proj.", c2, d);

  const bool relative = cfg.pos_encoding == PosEncoding::kRelative;
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::string n = layer("enc", l);
    ffn(n + "ff1.");
    norm(n + "att.ln.");
    attn(n + "att.", relative);
    const std::string c = n + "conv.";
    norm(c + "ln.");
    lin(c + "pw1.", d, 2 * d);
    m.add(c + "dw.w", xavier({cfg.conv_module_kernel, d}, cfg.conv_module_kernel, cfg.conv_module_kernel, rng));
    m.add(c + "dw.b", Tensor({d}));
    lin(c + "pw2.", d, d);
    ffn(n + "ff2.");
  }
  lin("ctc.", d, V);

  m.add("dec.embed", xavier({V, d}, V, d, rng));
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string n = layer("dec", l);
    norm(n + "self.ln.");
    attn(n + "self.", false);
    norm(n + "cross.ln.");
    attn(n + "cross.", false);
    ffn(n + "ff.");
  }
  norm("dec.final.");
  lin("dec.out.", d, V);
  return m;
}

Model Model::from_parameters(const ModelConfig& cfg, std::vector<Parameter> params) {
  Model ref = init(cfg, 0);
  if (params.size() != ref.params_.size())
    throw std::invalid_argument("parameter count " + std::to_string(params.size()) + " does not match config (" +
                                std::to_string(ref.params_.size()) + ")");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ref.params_[i].name || params[i].value.shape() != ref.params_[i].value.shape())
      throw std::invalid_argument("parameter " + params[i].name + " " + shape_string(params[i].value.shape()) +
                                  " does not match expected " + ref.params_[i].name + " " +
                                  shape_string(ref.params_[i].value.shape()));
    ref.params_[i].value = std::move(params[i].value);
  }
  return ref;
}

Var ParamBinder::operator()(const std::string& name) {
  const int i = m_.index(name);
  Var& v = vars_[static_cast<std::size_t>(i)];
  if (v.id < 0) v = g_.param(m_.parameters()[static_cast<std::size_t>(i)].value, i);
  return v;
}

Tensor sinusoidal_encoding(int frames, int d) {
  Tensor pe({frames, d});
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < d; ++j) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / d);
      pe.at(t, j) = j % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
    }
  return pe;
}

Var frontend_forward(ParamBinder& p, const RoiClip& clip, bool with_position) {
  if (clip.frames < 1) throw std::invalid_argument("frontend_forward: clip has no frames");
  for (double v : clip.data)
    if (!std::isfinite(v)) throw NumericalError("frontend_forward: non-finite input pixel");
  Graph& g = p.graph();
  const ModelConfig& cfg = p.model().config();
  Var x = g.constant(Tensor({clip.frames, clip.height, clip.width}, clip.data));
  Var h = g.swish(g.conv3d(x, p("front.conv3d.w"), p("front.conv3d.b"), cfg.frontend_stride));
  h = g.swish(g.conv2d_frames(h, p("front.conv2d1.w"), p("front.conv2d1.b"), 2));
  h = g.swish(g.conv2d_frames(h, p("front.conv2d2.w"), p("front.conv2d2.b"), 2));
  Var feats = g.linear(g.global_avg_pool(h), p("front.proj.w"), p("front.proj.b"));
  if (with_position && cfg.pos_encoding == PosEncoding::kAbsolute)
    feats = g.add(feats, g.constant(sinusoidal_encoding(clip.frames, cfg.d)));
  return feats;
}

Var encoder_forward(ParamBinder& p, Var x) {
  Graph& g = p.graph();
  const ModelConfig& cfg = p.model().config();
  const bool relative = cfg.pos_encoding == PosEncoding::kRelative;
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::string n = layer("enc", l);
    x = g.add(x, g.scale(ffn_block(p, n + "ff1.", x), 0.5));
    Var a = pre_norm(p, n + "att.ln.", x);
    x = g.add(x, attention(p, n + "att.", a, a, false, relative));
    x = g.add(x, conv_module(p, n + "conv.", x));
    x = g.add(x, g.scale(ffn_block(p, n + "ff2.", x), 0.5));
  }
  return x;
}

Var ctc_head(ParamBinder& p, Var latents) {
  Graph& g = p.graph();
  return g.log_softmax_rows(g.linear(latents, p("ctc.w"), p("ctc.b")));
}

Var decoder_forward(ParamBinder& p, Var latents, std::span<const TokenId> targets) {
  Graph& g = p.graph();
  const ModelConfig& cfg = p.model().config();
  if (g.value(latents).rows() == 0) throw std::invalid_argument("decoder_forward: empty latents");
  const TokenId eos = cfg.vocab_size - 1;
  std::vector<int> ids{eos};
  for (TokenId t : targets) {
    if (t <= 0 || t >= eos) throw std::invalid_argument("decoder_forward: invalid target id " + std::to_string(t));
    ids.push_back(t);
  }
  Var x = g.embedding(p("dec.embed"), ids);
  x = g.add(x, g.constant(sinusoidal_encoding(static_cast<int>(ids.size()), cfg.d)));
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string n = layer("dec", l);
    Var a = pre_norm(p, n + "self.ln.", x);
    x = g.add(x, attention(p, n + "self.", a, a, true, false));
    Var c = pre_norm(p, n + "cross.ln.", x);
    x = g.add(x, attention(p, n + "cross.", c, latents, false, false));
    x = g.add(x, ffn_block(p, n + "ff.", x));
  }
  x = pre_norm(p, "dec.final.", x);
  return g.log_softmax_rows(g.linear(x, p("dec.out.w"), p("dec.out.b")));
}

double hybrid_loss(double ctc_loglik, double attn_loglik, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("hybrid_loss: alpha must lie in [0, 1]");
  if (alpha == 1.0) return -ctc_loglik;
  if (alpha == 0.0) return -attn_loglik;
  return -(alpha * ctc_loglik + (1.0 - alpha) * attn_loglik);
}

Var hybrid_loss(Graph& g, Var ctc_loglik, Var attn_loglik, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("hybrid_loss: alpha must lie in [0, 1]");
  if (alpha == 1.0) return g.scale(ctc_loglik, -1.0);
  if (alpha == 0.0) return g.scale(attn_loglik, -1.0);
  return g.weighted_sum(ctc_loglik, -alpha, attn_loglik, -(1.0 - alpha));
}

Tensor encode_clip(const Model& m, const RoiClip& clip) {
  Graph g(false);
  ParamBinder p(g, m);
  return g.value(encoder_forward(p, frontend_forward(p, clip)));
}

CtcPosterior ctc_posterior(const Model& m, const Tensor& latents) {
  Graph g(false);
  ParamBinder p(g, m);
  const Tensor& lp = g.value(ctc_head(p, g.constant(latents)));
  return CtcPosterior(lp.rows(), lp.cols(), lp.values());
}

Tensor decoder_forward(const Model& m, const Tensor& latents, std::span<const TokenId> targets) {
  Graph g(false);
  ParamBinder p(g, m);
  return g.value(decoder_forward(p, g.constant(latents), targets));
}

std::vector<double> decoder_score_step(const Model& m, const Tensor& latents, std::span<const TokenId> prefix) {
  const TokenId eos = m.config().vocab_size - 1;
  for (TokenId t : prefix)
    if (t == eos) throw std::invalid_argument("decoder_score_step: prefix contains eos");
  Tensor out = decoder_forward(m, latents, prefix);
  const int r = static_cast<int>(prefix.size());
  std::vector<double> row(static_cast<std::size_t>(out.cols()));
  for (int j = 0; j < out.cols(); ++j) row[static_cast<std::size_t>(j)] = out.at(r, j);
  return row;
}

UtteranceLoss utterance_loss(const Model& m, const RoiClip& clip, std::span<const TokenId> target, double alpha,
                             std::vector<Tensor>* grads) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("utterance_loss: alpha must lie in [0, 1]");
  Graph g(grads != nullptr);
  ParamBinder p(g, m);
  Var lat = encoder_forward(p, frontend_forward(p, clip));
  UtteranceLoss out;
  Var ctc{}, attn{};
  if (alpha > 0.0) {
    ctc = g.ctc_loglik(ctc_head(p, lat), target, 0);
    out.ctc_loglik = g.value(ctc)[0];
    if (!std::isfinite(out.ctc_loglik)) {
      out.ctc_reachable = false;
      out.loss = std::numeric_limits<double>::infinity();
      return out;
    }
  }
  if (alpha < 1.0) {
    std::vector<int> next(target.begin(), target.end());
    next.push_back(m.config().vocab_size - 1);
    attn = g.pick_sum(decoder_forward(p, lat, target), next);
    out.attn_loglik = g.value(attn)[0];
  }
  if (alpha == 1.0) attn = ctc;
  if (alpha == 0.0) ctc = attn;
  Var loss = hybrid_loss(g, ctc, attn, alpha);
  out.loss = g.value(loss)[0];
  if (grads) {
    g.backward(loss);
    g.accumulate_param_grads(*grads);
  }
  return out;
}

}  // namespace lipread
