#include "lplab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "lplab/toydata.hpp"  // error types

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace lplab {

namespace {

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() {
  return "f32";
}
template <>
const char* dtype_name<double>() {
  return "f64";
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<TensorEntry>& tensors) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  uint64_t offset = 0;
  for (const auto& [name, value] : tensors) {
    if (header.contains(name)) throw std::invalid_argument("save_checkpoint: duplicate name " + name);
    std::visit(
        [&, n = name](const auto& t) {
          using T = std::remove_cv_t<std::remove_reference_t<decltype(t[0])>>;
          nlohmann::ordered_json meta;
          meta["dtype"] = dtype_name<T>();
          meta["shape"] = t.shape();
          meta["byte_offset"] = offset;
          header[n] = meta;
          offset += static_cast<uint64_t>(t.numel()) * sizeof(T);
        },
        value);
  }
  std::string hs = header.dump();
  uint64_t hlen = hs.size();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, value] : tensors) {
    std::visit(
        [&](const auto& t) {
          using T = std::remove_cv_t<std::remove_reference_t<decltype(t[0])>>;
          f.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
        },
        value);
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::vector<TensorEntry> load_checkpoint(const std::string& path, const std::string& prefix) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("load_checkpoint: cannot open " + path);
  f.seekg(0, std::ios::end);
  uint64_t fsize = static_cast<uint64_t>(f.tellg());
  f.seekg(0);
  if (fsize < 8) throw IntegrityError("load_checkpoint: file shorter than header length field");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (8 + hlen > fsize)
    throw IntegrityError("load_checkpoint: header extends past end of file (header length " +
                         std::to_string(hlen) + ")");
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(hs);
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("load_checkpoint: corrupt header: ") + e.what());
  }
  uint64_t data_start = 8 + hlen;
  uint64_t prev_end = 0;
  std::vector<TensorEntry> out;
  for (auto it = header.begin(); it != header.end(); ++it) {
    const auto& meta = it.value();
    std::string dtype = meta.at("dtype").get<std::string>();
    auto shape = meta.at("shape").get<std::vector<int>>();
    uint64_t off = meta.at("byte_offset").get<uint64_t>();
    if (off < prev_end)
      throw IntegrityError("load_checkpoint: overlapping or out-of-order offset at " + it.key() +
                           " (offset " + std::to_string(off) + ")");
    int64_t numel = Tensor<float>::numel_of(shape);
    uint64_t esize = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (esize == 0) throw IntegrityError("load_checkpoint: unknown dtype " + dtype);
    uint64_t end = off + static_cast<uint64_t>(numel) * esize;
    if (data_start + end > fsize)
      throw IntegrityError("load_checkpoint: truncated data for " + it.key() + " (needs bytes up to " +
                           std::to_string(data_start + end) + ", file has " + std::to_string(fsize) +
                           ")");
    prev_end = end;
    if (!it.key().starts_with(prefix)) continue;
    f.seekg(static_cast<std::streamoff>(data_start + off));
    if (dtype == "f32") {
      Tensor<float> t(shape);
      f.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(numel * 4));
      out.emplace_back(it.key(), std::move(t));
    } else {
      Tensor<double> t(shape);
      f.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(numel * 8));
      out.emplace_back(it.key(), std::move(t));
    }
    if (!f) throw IntegrityError("load_checkpoint: read failed for " + it.key());
  }
  return out;
}

}  // namespace lplab
