#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "maedet/checkpoint.hpp"
#include "maedet/errors.hpp"
#include "maedet/mae.hpp"
#include "maedet/rng.hpp"

using namespace maedet;
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("maedet_ckpt_" + std::to_string(std::random_device{}()) + "_" + std::to_string(++counter));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string stem(const std::string& name) const { return (path / name).string(); }
};

MAEConfig tiny_cfg() {
  MAEConfig cfg;
  cfg.encoder = {2, 16, 2, 4.0, 4, 1};
  cfg.decoder = {1, 8, 2, 4.0, 4, 1};
  cfg.image_size = 16;
  cfg.patch = 4;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("save -> load -> save reproduces both files byte for byte") {
  DtypeGuard g(Dtype::F64);
  TempDir dir;
  MAEModel model = MAEModel::init(tiny_cfg(), 9);
  Checkpoint c = make_checkpoint("mae", "{\"note\":1}", 17, "rng:abc", model.params());
  save_checkpoint(c, dir.stem("a"));
  Checkpoint c2 = load_checkpoint(dir.stem("a"));
  CHECK(c2.kind == "mae");
  CHECK(c2.step == 17);
  CHECK(c2.rng_state == "rng:abc");
  save_checkpoint(c2, dir.stem("b"));
  CHECK(slurp(dir.stem("a") + ".mfst") == slurp(dir.stem("b") + ".mfst"));
  CHECK(slurp(dir.stem("a") + ".bin") == slurp(dir.stem("b") + ".bin"));
}

TEST_CASE("load_into restores values exactly and reports full coverage") {
  DtypeGuard g(Dtype::F64);
  MAEModel a = MAEModel::init(tiny_cfg(), 9);
  MAEModel b = MAEModel::init(tiny_cfg(), 10);
  Checkpoint c = make_checkpoint("mae", "{}", 0, "", a.params());
  ParamList bp = b.params();
  LoadReport rep = load_into(c, bp);
  CHECK(rep.matched == static_cast<int64_t>(bp.size()));
  CHECK(rep.missing_params.empty());
  CHECK(rep.unused_tensors.empty());
  // values now agree to f32 storage precision
  ParamList ap = a.params();
  for (size_t i = 0; i < ap.size(); ++i) {
    const double* x = ap[i].tensor.data<double>();
    const double* y = bp[i].tensor.data<double>();
    for (int64_t j = 0; j < ap[i].tensor.numel(); ++j)
      CHECK(static_cast<float>(x[j]) == static_cast<float>(y[j]));
  }
}

TEST_CASE("export keeps the encoder scope and drops the decoder stack") {
  DtypeGuard g(Dtype::F64);
  MAEModel model = MAEModel::init(tiny_cfg(), 9);
  Checkpoint full = make_checkpoint("mae", "{}", 123, "state", model.params());
  Checkpoint enc = export_encoder(full);
  CHECK(enc.kind == "mae_encoder");
  CHECK(enc.provenance.present);
  CHECK(enc.provenance.source_step == 123);
  for (const auto& t : enc.tensors) {
    CHECK(encoder_scoped(t.name));
    CHECK(t.name.rfind("decoder", 0) != 0);
    CHECK(t.name.rfind("enc_to_dec", 0) != 0);
    CHECK(t.name.rfind("recon_head", 0) != 0);
    CHECK(t.name != "mask_token");
  }
  CHECK(enc.find("cls_token") != nullptr);
  CHECK(enc.find("embed.w") != nullptr);
  CHECK(enc.find("encoder.block0.qkv.w") != nullptr);
  CHECK(enc.find("encoder.ln_f.g") != nullptr);
  CHECK(enc.find("decoder.block0.qkv.w") == nullptr);

  // exported values match the source blob
  const TensorEntry* src = full.find("encoder.block0.qkv.w");
  const TensorEntry* dst = enc.find("encoder.block0.qkv.w");
  REQUIRE(src != nullptr);
  REQUIRE(dst != nullptr);
  CHECK(src->bytes == dst->bytes);
  for (int64_t i = 0; i < src->bytes / 4; ++i)
    CHECK(full.blob[static_cast<size_t>(src->offset / 4 + i)] ==
          enc.blob[static_cast<size_t>(dst->offset / 4 + i)]);

  // exporting an export is the identity
  Checkpoint enc2 = export_encoder(enc);
  CHECK(enc2.tensors.size() == enc.tensors.size());
  CHECK(enc2.blob == enc.blob);
}

TEST_CASE("export refuses non-mae checkpoints") {
  DtypeGuard g(Dtype::F64);
  MAEModel model = MAEModel::init(tiny_cfg(), 9);
  Checkpoint c = make_checkpoint("detector", "{}", 0, "", model.params());
  CHECK_THROWS_AS(export_encoder(c), CheckpointError);
}

TEST_CASE("partial loads report what was skipped, strict loads throw") {
  DtypeGuard g(Dtype::F64);
  MAEModel model = MAEModel::init(tiny_cfg(), 9);
  Checkpoint enc = export_encoder(make_checkpoint("mae", "{}", 0, "", model.params()));
  MAEModel fresh = MAEModel::init(tiny_cfg(), 11);
  ParamList fp = fresh.params();
  CHECK_THROWS_AS(load_into(enc, fp), CheckpointError);
  LoadReport rep = load_into(enc, fp, true);
  CHECK(rep.matched == static_cast<int64_t>(enc.tensors.size()));
  CHECK(rep.unused_tensors.empty());
  CHECK(!rep.missing_params.empty());
  for (const auto& name : rep.missing_params) CHECK(!encoder_scoped(name));
}

TEST_CASE("shape drift is an error even in partial mode") {
  DtypeGuard g(Dtype::F64);
  MAEModel model = MAEModel::init(tiny_cfg(), 9);
  Checkpoint c = make_checkpoint("mae", "{}", 0, "", model.params());
  MAEConfig wide = tiny_cfg();
  wide.encoder.dim = 32;
  MAEModel other = MAEModel::init(wide, 9);
  ParamList op = other.params();
  CHECK_THROWS_AS(load_into(c, op, true), CheckpointError);
}

TEST_CASE("corrupt and missing files raise CheckpointError") {
  DtypeGuard g(Dtype::F64);
  TempDir dir;
  CHECK_THROWS_AS(load_checkpoint(dir.stem("nope")), CheckpointError);

  MAEModel model = MAEModel::init(tiny_cfg(), 9);
  Checkpoint c = make_checkpoint("mae", "{}", 0, "", model.params());
  save_checkpoint(c, dir.stem("ok"));

  {
    std::ofstream f(dir.stem("ok") + ".mfst", std::ios::trunc);
    f << "{not json";
  }
  CHECK_THROWS_AS(load_checkpoint(dir.stem("ok")), CheckpointError);

  save_checkpoint(c, dir.stem("trunc"));
  fs::resize_file(dir.stem("trunc") + ".bin", 4);
  CHECK_THROWS_AS(load_checkpoint(dir.stem("trunc")), CheckpointError);
}

TEST_CASE("fnv1a64 matches reference vectors") {
  // published FNV-1a test vectors
  CHECK(fnv1a64("", 0) == 14695981039346656037ull);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ull);
  CHECK(hex64(0x85944171f73967e8ull) == "85944171f73967e8");
}

TEST_SUITE_END();
