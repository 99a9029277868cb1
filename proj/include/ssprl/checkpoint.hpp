#ifndef SSPRL_CHECKPOINT_HPP_
#define SSPRL_CHECKPOINT_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssprl/common.hpp"

namespace ssprl::checkpoint {

// Single-file archive: 8-byte magic, u64 manifest length, manifest JSON,
// then the raw column-major array payloads in manifest order.

constexpr char kMagic[8] = {'S', 'S', 'P', 'R', 'L', 'C', 'K', '1'};

template <typename T>
struct Archive {
  nlohmann::json manifest;  // includes "arrays": [{name, rows, cols}, ...]
  std::map<std::string, MatX<T>> arrays;
};

template <typename T>
const char* dtype_name() {
  if constexpr (sizeof(T) == 4) return "float32";
  else return "float64";
}

template <typename T>
void save_archive(const std::string& path, const std::vector<std::pair<std::string, const MatX<T>*>>& arrays,
                  nlohmann::json manifest) {
  manifest["format"] = "ssprl-checkpoint-v1";
  manifest["dtype"] = dtype_name<T>();
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, mat] : arrays)
    list.push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});
  manifest["arrays"] = list;
  const std::string mstr = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_archive: cannot open " + path);
  f.write(kMagic, 8);
  std::uint64_t mlen = mstr.size();
  f.write(reinterpret_cast<const char*>(&mlen), 8);
  f.write(mstr.data(), static_cast<std::streamsize>(mlen));
  for (const auto& [name, mat] : arrays)
    f.write(reinterpret_cast<const char*>(mat->data()),
            static_cast<std::streamsize>(sizeof(T) * mat->size()));
  if (!f) throw IoError("save_archive: write failed for " + path);
}

template <typename T>
Archive<T> load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_archive: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("load_archive: " + path + " is not an ssprl checkpoint");
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mstr(mlen, '\0');
  f.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw IoError("load_archive: truncated manifest in " + path);
  Archive<T> ar;
  ar.manifest = nlohmann::json::parse(mstr);
  if (ar.manifest.value("dtype", "") != dtype_name<T>())
    throw IoError("load_archive: dtype mismatch (" + ar.manifest.value("dtype", "?") +
                  " on disk, " + dtype_name<T>() + " requested)");
  for (const auto& entry : ar.manifest.at("arrays")) {
    const std::string name = entry.at("name").template get<std::string>();
    MatX<T> mat(entry.at("rows").template get<Eigen::Index>(),
                entry.at("cols").template get<Eigen::Index>());
    f.read(reinterpret_cast<char*>(mat.data()),
           static_cast<std::streamsize>(sizeof(T) * mat.size()));
    if (!f) throw IoError("load_archive: truncated payload for array " + name);
    ar.arrays.emplace(name, std::move(mat));
  }
  return ar;
}

}  // namespace ssprl::checkpoint

#endif  // SSPRL_CHECKPOINT_HPP_
