#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "core/tensor_io.hpp"

using namespace pistm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("pistm_io_test_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("tensor round-trip preserves dims and bits") {
  TempDir tmp;
  Rng rng = make_rng(5);
  Tensor t = random_normal({3, 4, 5}, rng);
  t[7] = -0.0;
  t[11] = 1e-308;
  const fs::path file = tmp.path / "t.pstm";
  save_tensor(t, file.string());
  Tensor r = load_tensor(file.string());
  REQUIRE(r.same_dims(t));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(r[i] == t[i]);
}

TEST_CASE("scalar and 1d tensors round-trip") {
  TempDir tmp;
  Tensor s = Tensor::scalar(42.5);
  save_tensor(s, (tmp.path / "s.pstm").string());
  Tensor rs = load_tensor((tmp.path / "s.pstm").string());
  CHECK(rs.ndim() == 1);
  CHECK(rs[0] == 42.5);
}

TEST_CASE("loading a missing or corrupt file raises io errors") {
  TempDir tmp;
  CHECK_THROWS_AS(load_tensor((tmp.path / "absent.pstm").string()), IoError);

  const fs::path bad = tmp.path / "bad.pstm";
  write_text_file(bad.string(), "not a tensor container");
  CHECK_THROWS_AS(load_tensor(bad.string()), IoError);
}

TEST_CASE("content hash is stable and sensitive") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {1, 2, 3, 4});
  Tensor c({2, 2}, {1, 2, 3, 5});
  Tensor d({4}, {1, 2, 3, 4});  // same payload, different dims
  CHECK(hash_tensor(a) == hash_tensor(b));
  CHECK(hash_tensor(a) != hash_tensor(c));
  CHECK(hash_tensor(a) != hash_tensor(d));
  CHECK(hash_hex(hash_tensor(a)).size() == 16);
}

TEST_CASE("checkpoint round-trip with manifest and metadata") {
  TempDir tmp;
  Rng rng = make_rng(9);
  Tensor w = random_normal({4, 4}, rng);
  Tensor b = random_normal({4}, rng);
  nlohmann::json meta = {{"kind", "test"}, {"epochs", 12}};
  save_checkpoint(tmp.path.string(),
                  {{"weight", &w}, {"bias", &b}}, meta);

  CHECK(fs::exists(tmp.path / "manifest.json"));
  nlohmann::json manifest = read_json_file((tmp.path / "manifest.json").string());
  CHECK(manifest["format"] == "pistm-checkpoint");
  CHECK(manifest["params"].contains("weight"));
  CHECK(manifest["meta"]["epochs"] == 12);

  nlohmann::json meta_out;
  auto params = load_checkpoint(tmp.path.string(), &meta_out);
  REQUIRE(params.count("weight") == 1);
  REQUIRE(params.count("bias") == 1);
  CHECK(meta_out["kind"] == "test");
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(params.at("weight")[i] == w[i]);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(params.at("bias")[i] == b[i]);
}

TEST_CASE("checkpoint load verifies content hashes") {
  TempDir tmp;
  Tensor w({2}, {1.0, 2.0});
  save_checkpoint(tmp.path.string(), {{"w", &w}}, {});
  // overwrite the tensor file with different content
  Tensor tampered({2}, {1.0, 3.0});
  save_tensor(tampered, (tmp.path / "w.pstm").string());
  CHECK_THROWS_AS(load_checkpoint(tmp.path.string(), nullptr), IoError);
}

TEST_CASE("json files are written deterministically") {
  TempDir tmp;
  nlohmann::json j = {{"zeta", 1}, {"alpha", {{"b", 2}, {"a", 1}}}};
  const auto p1 = (tmp.path / "a.json").string();
  const auto p2 = (tmp.path / "b.json").string();
  write_json_file(p1, j);
  write_json_file(p2, j);
  CHECK(read_text_file(p1) == read_text_file(p2));
  CHECK(hash_file(p1) == hash_file(p2));
}
