#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lipread/model.h"
#include "lipread/roi.h"

namespace lipread {

struct Checkpoint {
  Model model;
  std::string vocab_hash;
  NormStats norm;  // pixel statistics of the training data
};

// "LPCK", version, then (name, rank, dims, float32 values) records. The model
// config, vocabulary hash and pixel statistics travel as records named
// meta.config, meta.vocab_hash and meta.norm_stats.
std::vector<uint8_t> serialize_checkpoint(const Model& model, const std::string& vocab_hash, const NormStats& norm);
Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes, const std::string& origin);

void save_checkpoint(const std::string& path, const Model& model, const std::string& vocab_hash,
                     const NormStats& norm);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lipread
