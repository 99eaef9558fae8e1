#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "core/tensor.hpp"

namespace pistm {

// Tensor container file: magic "PSTM", u32 version=1, u32 dtype (1 = f64),
// u32 ndim, ndim u64 extents, row-major little-endian f64 payload.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

// 64-bit FNV-1a, used to key stage artifacts and record data provenance.
std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_tensor(const Tensor& t);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hash_hex(std::uint64_t h);

// Model checkpoint: manifest.json naming each parameter and its tensor file,
// plus a free-form "meta" object for configs and normalization stats.
void save_checkpoint(const std::filesystem::path& dir,
                     const std::map<std::string, const Tensor*>& params,
                     const nlohmann::json& meta);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir,
                                              nlohmann::json* meta_out);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace pistm
