#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maedet/params.hpp"
#include "maedet/tensor.hpp"

namespace maedet {

/// One tensor record in a checkpoint manifest. `offset`/`bytes` address the
/// companion blob; values are raw little-endian 32-bit floats.
struct TensorEntry {
  std::string name;
  Shape shape;
  int64_t offset = 0;
  int64_t bytes = 0;
};

struct Provenance {
  bool present = false;
  std::string source_hash;
  int64_t source_step = 0;
};

/// In-memory image of a `<stem>.mfst` + `<stem>.bin` pair. Saving the result
/// of a load reproduces both files byte for byte.
struct Checkpoint {
  int format_version = 1;
  std::string kind;  // "mae", "mae_encoder" or "detector"
  std::string config_json = "{}";
  int64_t step = 0;
  std::string rng_state;
  Provenance provenance;
  std::vector<TensorEntry> tensors;
  std::vector<float> blob;

  const TensorEntry* find(const std::string& name) const;
};

Checkpoint make_checkpoint(const std::string& kind, const std::string& config_json, int64_t step,
                           const std::string& rng_state, const ParamList& params);

void save_checkpoint(const Checkpoint& c, const std::string& stem);
Checkpoint load_checkpoint(const std::string& stem);

struct LoadReport {
  int64_t matched = 0;
  std::vector<std::string> missing_params;  // params with no tensor in the checkpoint
  std::vector<std::string> unused_tensors;  // checkpoint tensors no param claimed
};

/// Copies checkpoint values into same-named params. Shape mismatches always
/// throw; with allow_partial=false any missing or unused name throws too.
LoadReport load_into(const Checkpoint& c, ParamList& params, bool allow_partial = false);

/// True for the tensor names an encoder export keeps: cls_token, embed.w
/// and everything under encoder.
bool encoder_scoped(const std::string& name);

/// Keeps cls_token, embed.w and encoder.*; drops decoder blocks, mask token,
/// the encoder->decoder projection and the reconstruction head. Already
/// encoder-only checkpoints pass through unchanged. Provenance records the
/// source hash and step.
Checkpoint export_encoder(const Checkpoint& c);

uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 14695981039346656037ull);
std::string hex64(uint64_t v);

}  // namespace maedet
