#include "maedet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "maedet/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

namespace maedet {

using nlohmann::json;

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

const TensorEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Checkpoint make_checkpoint(const std::string& kind, const std::string& config_json, int64_t step,
                           const std::string& rng_state, const ParamList& params) {
  Checkpoint c;
  c.kind = kind;
  c.config_json = config_json;
  c.step = step;
  c.rng_state = rng_state;
  int64_t offset = 0;
  for (const auto& p : params) {
    TensorEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.offset = offset;
    e.bytes = p.tensor.numel() * 4;
    offset += e.bytes;
    c.tensors.push_back(std::move(e));
    const auto vals = p.tensor.to_vector();
    for (double v : vals) c.blob.push_back(static_cast<float>(v));
  }
  return c;
}

static std::string manifest_text(const Checkpoint& c) {
  json j;
  j["format_version"] = c.format_version;
  j["kind"] = c.kind;
  try {
    j["config"] = json::parse(c.config_json);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  j["step"] = c.step;
  j["rng_state"] = c.rng_state;
  if (c.provenance.present) {
    j["provenance"] = {{"source_hash", c.provenance.source_hash},
                       {"source_step", c.provenance.source_step}};
  } else {
    j["provenance"] = nullptr;
  }
  j["tensors"] = json::array();
  for (const auto& t : c.tensors) {
    json e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    e["offset"] = t.offset;
    e["bytes"] = t.bytes;
    j["tensors"].push_back(e);
  }
  return j.dump(2) + "\n";
}

void save_checkpoint(const Checkpoint& c, const std::string& stem) {
  const std::string text = manifest_text(c);
  {
    std::ofstream f(stem + ".mfst", std::ios::binary);
    if (!f) throw CheckpointError("cannot write " + stem + ".mfst");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw CheckpointError("write failed for " + stem + ".mfst");
  }
  {
    std::ofstream f(stem + ".bin", std::ios::binary);
    if (!f) throw CheckpointError("cannot write " + stem + ".bin");
    f.write(reinterpret_cast<const char*>(c.blob.data()),
            static_cast<std::streamsize>(c.blob.size() * 4));
    if (!f) throw CheckpointError("write failed for " + stem + ".bin");
  }
}

Checkpoint load_checkpoint(const std::string& stem) {
  std::ifstream mf(stem + ".mfst", std::ios::binary);
  if (!mf) throw CheckpointError("cannot open " + stem + ".mfst");
  json j;
  try {
    mf >> j;
  } catch (const json::exception& e) {
    throw CheckpointError(stem + ".mfst: " + e.what());
  }
  Checkpoint c;
  try {
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != 1)
      throw CheckpointError(stem + ": unsupported format_version " +
                            std::to_string(c.format_version));
    c.kind = j.at("kind").get<std::string>();
    c.config_json = j.at("config").dump();
    c.step = j.at("step").get<int64_t>();
    c.rng_state = j.at("rng_state").get<std::string>();
    if (!j.at("provenance").is_null()) {
      c.provenance.present = true;
      c.provenance.source_hash = j["provenance"].at("source_hash").get<std::string>();
      c.provenance.source_step = j["provenance"].at("source_step").get<int64_t>();
    }
    int64_t expect_offset = 0;
    for (const auto& e : j.at("tensors")) {
      TensorEntry t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      t.offset = e.at("offset").get<int64_t>();
      t.bytes = e.at("bytes").get<int64_t>();
      if (t.bytes != shape_numel(t.shape) * 4)
        throw CheckpointError(stem + ": tensor " + t.name + " bytes " + std::to_string(t.bytes) +
                              " inconsistent with shape " + shape_str(t.shape));
      if (t.offset != expect_offset)
        throw CheckpointError(stem + ": tensor " + t.name + " offset " +
                              std::to_string(t.offset) + ", expected " +
                              std::to_string(expect_offset));
      expect_offset += t.bytes;
      c.tensors.push_back(std::move(t));
    }
    std::ifstream bf(stem + ".bin", std::ios::binary | std::ios::ate);
    if (!bf) throw CheckpointError("cannot open " + stem + ".bin");
    const auto size = static_cast<int64_t>(bf.tellg());
    if (size != expect_offset)
      throw CheckpointError(stem + ".bin is " + std::to_string(size) + " bytes, manifest expects " +
                            std::to_string(expect_offset));
    bf.seekg(0);
    c.blob.resize(static_cast<size_t>(size / 4));
    bf.read(reinterpret_cast<char*>(c.blob.data()), size);
    if (!bf) throw CheckpointError("read failed for " + stem + ".bin");
  } catch (const json::exception& e) {
    throw CheckpointError(stem + ".mfst: " + e.what());
  }
  return c;
}

LoadReport load_into(const Checkpoint& c, ParamList& params, bool allow_partial) {
  LoadReport report;
  std::vector<char> used(c.tensors.size(), 0);
  for (auto& p : params) {
    const TensorEntry* e = nullptr;
    size_t ei = 0;
    for (size_t i = 0; i < c.tensors.size(); ++i)
      if (c.tensors[i].name == p.name) {
        e = &c.tensors[i];
        ei = i;
        break;
      }
    if (!e) {
      if (!allow_partial)
        throw CheckpointError("checkpoint has no tensor named " + p.name);
      report.missing_params.push_back(p.name);
      continue;
    }
    if (e->shape != p.tensor.shape())
      throw CheckpointError("tensor " + p.name + ": checkpoint shape " + shape_str(e->shape) +
                            " vs model " + shape_str(p.tensor.shape()));
    used[ei] = 1;
    const float* src = c.blob.data() + e->offset / 4;
    const int64_t n = p.tensor.numel();
    if (p.tensor.dtype() == Dtype::F32) {
      float* dst = p.tensor.data<float>();
      std::memcpy(dst, src, static_cast<size_t>(n) * 4);
    } else {
      double* dst = p.tensor.data<double>();
      for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<double>(src[i]);
    }
    ++report.matched;
  }
  for (size_t i = 0; i < c.tensors.size(); ++i)
    if (!used[i]) report.unused_tensors.push_back(c.tensors[i].name);
  if (!allow_partial && !report.unused_tensors.empty())
    throw CheckpointError("checkpoint tensor " + report.unused_tensors.front() +
                          " has no matching model parameter");
  return report;
}

bool encoder_scoped(const std::string& name) {
  return name == "cls_token" || name == "embed.w" || name.rfind("encoder.", 0) == 0;
}

Checkpoint export_encoder(const Checkpoint& c) {
  if (c.kind == "mae_encoder") return c;
  if (c.kind != "mae")
    throw CheckpointError("export requires an mae checkpoint, got kind '" + c.kind + "'");
  bool has_encoder = false;
  for (const auto& t : c.tensors)
    if (t.name.rfind("encoder.", 0) == 0) { has_encoder = true; break; }
  if (!has_encoder) throw CheckpointError("checkpoint has no encoder-scoped tensors");

  const std::string src_manifest = manifest_text(c);
  uint64_t h = fnv1a64(src_manifest.data(), src_manifest.size());
  h = fnv1a64(c.blob.data(), c.blob.size() * 4, h);

  Checkpoint out;
  out.format_version = c.format_version;
  out.kind = "mae_encoder";
  out.config_json = c.config_json;
  out.step = c.step;
  out.rng_state = c.rng_state;
  out.provenance.present = true;
  out.provenance.source_hash = hex64(h);
  out.provenance.source_step = c.step;
  int64_t offset = 0;
  for (const auto& t : c.tensors) {
    if (!encoder_scoped(t.name)) continue;
    TensorEntry e = t;
    e.offset = offset;
    offset += e.bytes;
    const float* src = c.blob.data() + t.offset / 4;
    out.blob.insert(out.blob.end(), src, src + t.bytes / 4);
    out.tensors.push_back(std::move(e));
  }
  return out;
}

}  // namespace maedet
