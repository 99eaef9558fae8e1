#include "core/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>


namespace pistm {

static_assert(std::endian::native == std::endian::little,
              "tensor container payload is little-endian");

namespace {

constexpr char kMagic[4] = {'P', 'S', 'T', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF64 = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated", "truncated tensor file: " + path.string());
  return v;
}

}  // namespace

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("open_failed", "cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, kDtypeF64);
  write_pod(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.dims()) write_pod(os, static_cast<std::uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw IoError("write_failed", "write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing_input", "cannot open tensor file: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad_magic", "not a tensor container file: " + path.string());
  }
  auto version = read_pod<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw IoError("bad_version",
                  "unsupported tensor file version " + std::to_string(version) + ": " + path.string());
  }
  auto dtype = read_pod<std::uint32_t>(is, path);
  if (dtype != kDtypeF64) {
    throw IoError("bad_dtype", "unsupported dtype " + std::to_string(dtype) + ": " + path.string());
  }
  auto ndim = read_pod<std::uint32_t>(is, path);
  Shape dims(ndim);
  for (auto& d : dims) d = static_cast<std::size_t>(read_pod<std::uint64_t>(is, path));
  Tensor t(dims);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw IoError("truncated", "truncated tensor payload: " + path.string());
  return t;
}

std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_tensor(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t d : t.dims()) {
    std::uint64_t u = d;
    h = fnv1a64(&u, sizeof(u), h);
  }
  return fnv1a64(t.data(), t.size() * sizeof(double), h);
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing_input", "cannot open for hashing: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& dir,
                     const std::map<std::string, const Tensor*>& params,
                     const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "pistm-checkpoint";
  manifest["version"] = 1;
  nlohmann::json plist = nlohmann::json::object();
  for (const auto& [name, tensor] : params) {
    const std::string file = name + ".pstm";
    save_tensor(*tensor, dir / file);
    plist[name] = {{"file", file}, {"hash", hash_hex(hash_tensor(*tensor))}};
  }
  manifest["params"] = plist;
  manifest["meta"] = meta;
  write_json_file(dir / "manifest.json", manifest);
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir,
                                              nlohmann::json* meta_out) {
  const auto manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("format", "") != "pistm-checkpoint") {
    throw IoError("bad_manifest", "not a checkpoint manifest: " + (dir / "manifest.json").string());
  }
  std::map<std::string, Tensor> params;
  for (const auto& [name, entry] : manifest.at("params").items()) {
    Tensor t = load_tensor(dir / entry.at("file").get<std::string>());
    const std::string expect = entry.at("hash").get<std::string>();
    if (hash_hex(hash_tensor(t)) != expect) {
      throw IoError("hash_mismatch", "checkpoint parameter '" + name +
                                         "' does not match its manifest hash");
    }
    params.emplace(name, std::move(t));
  }
  if (meta_out) *meta_out = manifest.value("meta", nlohmann::json::object());
  return params;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("open_failed", "cannot open for writing: " + path.string());
  os << text;
  if (!os) throw IoError("write_failed", "write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing_input", "cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad_json", "invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace pistm
