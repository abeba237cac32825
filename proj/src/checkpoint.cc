#include "lipread/checkpoint.h"

#include <bit>
#include <cstring>
#include <cmath>
#include <limits>

#include "lipread/error.h"
#include "lipread/io.h"

namespace lipread {
namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& out, double v) { put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v))); }

void put_record(std::vector<uint8_t>& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
  for (double v : t.values()) put_f32(out, v);
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& b, const std::string& origin) : b_(b), origin_(origin) {}
  bool done() const { return pos_ == b_.size(); }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<long>(pos_), b_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }
  [[noreturn]] void fail(const std::string& what) const { throw DataError(origin_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated checkpoint");
  }
  const std::vector<uint8_t>& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::vector<double> config_values(const ModelConfig& c) {
  return {double(c.d), double(c.encoder_layers), double(c.decoder_layers), double(c.heads), double(c.ffn()),
          double(c.temporal_kernel), double(c.spatial_kernel), double(c.frontend_channels1),
          double(c.frontend_channels2), double(c.frontend_stride), double(c.conv_module_kernel), double(c.vocab_size),
          c.pos_encoding == PosEncoding::kRelative ? 1.0 : 0.0, double(c.rel_max_dist)};
}

ModelConfig config_from(const Tensor& t, const Reader& r) {
  if (t.size() != 14) r.fail("meta.config has " + std::to_string(t.size()) + " values, expected 14");
  auto i = [&](std::size_t k) { return static_cast<int>(t[k]); };
  ModelConfig c;
  c.d = i(0);
  c.encoder_layers = i(1);
  c.decoder_layers = i(2);
  c.heads = i(3);
  c.ffn_dim = i(4);
  c.temporal_kernel = i(5);
  c.spatial_kernel = i(6);
  c.frontend_channels1 = i(7);
  c.frontend_channels2 = i(8);
  c.frontend_stride = i(9);
  c.conv_module_kernel = i(10);
  c.vocab_size = i(11);
  c.pos_encoding = t[12] != 0.0 ? PosEncoding::kRelative : PosEncoding::kAbsolute;
  c.rel_max_dist = i(13);
  return c;
}

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const Model& model, const std::string& vocab_hash, const NormStats& norm) {
  std::vector<uint8_t> out{'L', 'P', 'C', 'K'};
  put_u32(out, kVersion);
  const std::vector<double> cfg = config_values(model.config());
  put_record(out, "meta.config", Tensor({static_cast<int>(cfg.size())}, cfg));
  const uint64_t h = std::stoull(vocab_hash, nullptr, 16);
  std::vector<double> chunks;
  for (int i = 3; i >= 0; --i) chunks.push_back(static_cast<double>((h >> (16 * i)) & 0xffff));
  put_record(out, "meta.vocab_hash", Tensor({4}, chunks));
  put_record(out, "meta.norm_stats", Tensor({2}, std::vector<double>{norm.mean, norm.variance}));
  for (const Parameter& p : model.parameters()) put_record(out, p.name, p.value);
  return out;
}

Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(4) != "LPCK") r.fail("bad LPCK magic");
  const uint32_t version = r.u32();
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  std::vector<Parameter> params;
  Tensor cfg_t, hash_t, norm_t;
  while (!r.done()) {
    const uint32_t n = r.u32();
    if (n > 4096) r.fail("implausible record name length");
    std::string name = r.str(n);
    const uint32_t rank = r.u32();
    if (rank > 8) r.fail("implausible rank for " + name);
    std::vector<int> shape;
    std::size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = r.u32();
      if (d > (1u << 24)) r.fail("implausible dimension for " + name);
      shape.push_back(static_cast<int>(d));
      count *= d;
    }
    std::vector<double> values(count);
    for (double& v : values) {
      v = std::bit_cast<float>(r.u32());
      if (!std::isfinite(v)) r.fail("non-finite value in " + name);
    }
    Tensor t(std::move(shape), std::move(values));
    if (name == "meta.config")
      cfg_t = std::move(t);
    else if (name == "meta.norm_stats")
      norm_t = std::move(t);
    else if (name == "meta.vocab_hash")
      hash_t = std::move(t);
    else
      params.push_back({std::move(name), std::move(t)});
  }
  if (cfg_t.empty() || hash_t.size() != 4 || norm_t.size() != 2) r.fail("missing meta records");
  uint64_t h = 0;
  for (std::size_t i = 0; i < 4; ++i) h = (h << 16) | static_cast<uint64_t>(hash_t[i]);
  Checkpoint ck;
  ck.vocab_hash = to_hex(h);
  ck.norm = {norm_t[0], norm_t[1]};
  try {
    ck.model = Model::from_parameters(config_from(cfg_t, r), std::move(params));
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Model& model, const std::string& vocab_hash,
                     const NormStats& norm) {
  write_file_bytes(path, serialize_checkpoint(model, vocab_hash, norm));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file_bytes(path), path); }

}  // namespace lipread
